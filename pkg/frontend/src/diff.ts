/** Character-level diff of two normalized labels.
 *
 * Classic LCS alignment; adjacent characters with the same kind fold into
 * one segment. "del" text appears only in the left string (the seed),
 * "add" only in the right (the match).
 */

export type SegmentKind = "same" | "del" | "add";

export interface DiffSegment {
  kind: SegmentKind;
  text: string;
}

export function diffLabels(left: string, right: string): DiffSegment[] {
  const n = left.length;
  const m = right.length;
  // LCS length table (n+1 x m+1)
  const table: number[][] = [];
  for (let i = 0; i <= n; i++) table.push(new Array<number>(m + 1).fill(0));
  for (let i = 1; i <= n; i++) {
    const row = table[i]!;
    const prev = table[i - 1]!;
    for (let j = 1; j <= m; j++) {
      row[j] =
        left[i - 1] === right[j - 1]
          ? prev[j - 1]! + 1
          : Math.max(prev[j]!, row[j - 1]!);
    }
  }
  // Backtrack from the end, emitting per-character ops in reverse.
  const ops: Array<[SegmentKind, string]> = [];
  let i = n;
  let j = m;
  while (i > 0 && j > 0) {
    if (left[i - 1] === right[j - 1]) {
      ops.push(["same", left[i - 1]!]);
      i--;
      j--;
    } else if (table[i - 1]![j]! >= table[i]![j - 1]!) {
      ops.push(["del", left[i - 1]!]);
      i--;
    } else {
      ops.push(["add", right[j - 1]!]);
      j--;
    }
  }
  while (i > 0) {
    ops.push(["del", left[i - 1]!]);
    i--;
  }
  while (j > 0) {
    ops.push(["add", right[j - 1]!]);
    j--;
  }
  ops.reverse();

  const segments: DiffSegment[] = [];
  for (const [kind, ch] of ops) {
    const last = segments[segments.length - 1];
    if (last && last.kind === kind) last.text += ch;
    else segments.push({ kind, text: ch });
  }
  return segments;
}

export function hasChanges(segments: DiffSegment[]): boolean {
  return segments.some((s) => s.kind !== "same");
}
