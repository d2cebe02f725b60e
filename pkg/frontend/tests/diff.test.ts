import { describe, expect, it } from "vitest";

import { diffLabels, hasChanges } from "../src/diff.js";

describe("diffLabels", () => {
  it("identical labels produce a single unchanged segment", () => {
    const segments = diffLabels("fraud at the count", "fraud at the count");
    expect(segments).toEqual([{ kind: "same", text: "fraud at the count" }]);
    expect(hasChanges(segments)).toBe(false);
  });

  it("disjoint labels highlight both sides", () => {
    const segments = diffLabels("aaaa", "bbbb");
    const kinds = segments.map((s) => s.kind);
    expect(kinds).toContain("del");
    expect(kinds).toContain("add");
    expect(kinds).not.toContain("same");
    expect(hasChanges(segments)).toBe(true);
  });

  it("reconstructs both inputs from the segments", () => {
    const left = "fraud. the biggest disgrace";
    const right = "fox news projects the win";
    const segments = diffLabels(left, right);
    const rebuiltLeft = segments
      .filter((s) => s.kind !== "add")
      .map((s) => s.text)
      .join("");
    const rebuiltRight = segments
      .filter((s) => s.kind !== "del")
      .map((s) => s.text)
      .join("");
    expect(rebuiltLeft).toBe(left);
    expect(rebuiltRight).toBe(right);
  });

  it("handles empty sides", () => {
    expect(diffLabels("", "")).toEqual([]);
    expect(diffLabels("abc", "")).toEqual([{ kind: "del", text: "abc" }]);
    expect(diffLabels("", "abc")).toEqual([{ kind: "add", text: "abc" }]);
  });

  it("merges adjacent characters of one kind", () => {
    const segments = diffLabels("stop the steal", "stop the count");
    for (let i = 1; i < segments.length; i++) {
      expect(segments[i]!.kind).not.toBe(segments[i - 1]!.kind);
    }
  });
});
