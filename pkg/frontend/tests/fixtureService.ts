/** In-memory stand-in for the /v1 service, mirroring the documented
 * contract closely enough to drive the console end to end: candidate
 * pagination with tier/story/distance filters, image metadata, and the
 * review flow with seed-set versioning and conflict responses.
 */

import type { FetchLike } from "../src/api.js";
import type { Candidate, Decision, ImageMeta, ReviewAction } from "../src/types.js";

export interface RecordedRequest {
  method: string;
  url: string;
  body: unknown;
}

export function makeCandidates(count = 12): Candidate[] {
  const decisions: Decision[] = [
    "accepted", "accepted", "accepted", "accepted", "accepted", "accepted",
    "accepted", "accepted", "accepted_visual_only", "accepted_visual_only",
    "errored", "rejected_text",
  ];
  return Array.from({ length: count }, (_, i) => ({
    schema_version: 1,
    image_id: `img-${String(i).padStart(3, "0")}`,
    distance: 10 + i,
    text_similarity: decisions[i % decisions.length] === "accepted" ? 0.8
      : decisions[i % decisions.length] === "rejected_text" ? 0.01 : null,
    decision: decisions[i % decisions.length]!,
    query_id: `seed-${i % 3}`,
    provenance: [],
  }));
}

export class FixtureService {
  requests: RecordedRequest[] = [];
  reviews: ReviewAction[] = [];
  seedSetVersion = 3;
  promoted = new Set<string>();
  labels = new Map<string, string>();
  failNextReviewWith: number | null = null;

  constructor(public candidates: Candidate[] = makeCandidates()) {
    for (const c of this.candidates) {
      this.labels.set(c.image_id, `overlay text of ${c.image_id}`);
      this.labels.set(c.query_id, `overlay text of ${c.query_id}`);
    }
  }

  mutatingRequests(): RecordedRequest[] {
    return this.requests.filter((r) => r.method !== "GET");
  }

  fetch: FetchLike = async (url, init) => {
    const method = (init?.method ?? "GET").toUpperCase();
    const body = init?.body ? JSON.parse(String(init.body)) : null;
    this.requests.push({ method, url, body });
    const u = new URL(url, "http://fixture");

    if (method === "GET" && u.pathname === "/v1/candidates") {
      return this.handleCandidates(u);
    }
    const metaMatch = u.pathname.match(/^\/v1\/images\/([^/]+)\/meta$/);
    if (method === "GET" && metaMatch) {
      return json(200, this.meta(metaMatch[1]!));
    }
    if (method === "POST" && u.pathname === "/v1/review") {
      return this.handleReview(body as ReviewAction);
    }
    return json(404, { code: "not_found", message: `no route ${u.pathname}` });
  };

  private handleCandidates(u: URL): Response {
    let items = [...this.candidates];
    const tier = u.searchParams.get("tier");
    if (tier) items = items.filter((c) => c.decision === tier);
    const maxDistance = u.searchParams.get("max_distance");
    if (maxDistance !== null)
      items = items.filter((c) => c.distance <= Number(maxDistance));
    const pageSize = Number(u.searchParams.get("page_size") ?? "50");
    const page = Number(u.searchParams.get("page") ?? "1");
    const total = items.length;
    const start = (page - 1) * pageSize;
    return json(200, {
      items: items.slice(start, start + pageSize),
      page,
      page_size: pageSize,
      total,
      pages: Math.max(1, Math.ceil(total / pageSize)),
    });
  }

  private meta(imageId: string): ImageMeta {
    const label = this.labels.get(imageId);
    return {
      image_id: imageId,
      storage_path: `images/${imageId}.png`,
      phash64: "0".repeat(16),
      pdq256: "0".repeat(64),
      pdq_quality: 80,
      label: label === undefined ? null
        : { raw: label, normalized: label, coverage: null },
      ingested_at: "2024-01-01T00:00:00+00:00",
    };
  }

  private handleReview(action: ReviewAction): Response {
    if (this.failNextReviewWith !== null) {
      const status = this.failNextReviewWith;
      this.failNextReviewWith = null;
      return json(status, { code: status === 409 ? "version_conflict" : "error",
                            message: "refused by fixture" });
    }
    this.reviews.push(action);
    const payload: Record<string, unknown> = {
      review_id: this.reviews.length,
      verdict: action.verdict,
    };
    if (action.verdict === "approve" && action.promote_to_seed) {
      if (this.promoted.has(action.image_id)) {
        return json(409, { code: "already_member",
                           message: "image already in the seed set" });
      }
      const expected = action.promote_to_seed.expected_version;
      if (expected !== undefined && expected !== this.seedSetVersion) {
        return json(409, { code: "version_conflict",
                           message: "seed set moved" });
      }
      this.promoted.add(action.image_id);
      this.seedSetVersion += 1;
      payload["seed_set"] = action.promote_to_seed.seed_set;
      payload["seed_set_version"] = this.seedSetVersion;
    }
    return json(200, payload);
  }
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}
