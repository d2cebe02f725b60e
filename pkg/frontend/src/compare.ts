/** Comparison view model: seed vs match with the text evidence laid out. */

import { ApiClient } from "./api.js";
import { DiffSegment, diffLabels } from "./diff.js";
import type { Candidate, ImageMeta } from "./types.js";

export interface Comparison {
  candidate: Candidate;
  seedImageUrl: string;
  matchImageUrl: string;
  seedLabel: string;
  matchLabel: string;
  distance: number;
  similarity: number | null;
  /** true when the decision was a text rejection: render the score in red */
  rejectedOnText: boolean;
  /** true when OCR failed for this candidate: offer a retry instead */
  errored: boolean;
  diff: DiffSegment[];
}

export async function buildComparison(
  api: ApiClient,
  candidate: Candidate,
): Promise<Comparison> {
  const [seedMeta, matchMeta] = await Promise.all([
    api.imageMeta(candidate.query_id).catch(() => null),
    api.imageMeta(candidate.image_id).catch(() => null),
  ]);
  const seedLabel = labelOf(seedMeta);
  const matchLabel = labelOf(matchMeta);
  return {
    candidate,
    seedImageUrl: api.imageUrl(candidate.query_id),
    matchImageUrl: api.imageUrl(candidate.image_id),
    seedLabel,
    matchLabel,
    distance: candidate.distance,
    similarity: candidate.text_similarity,
    rejectedOnText: candidate.decision === "rejected_text",
    errored: candidate.decision === "errored",
    diff: diffLabels(seedLabel, matchLabel),
  };
}

function labelOf(meta: ImageMeta | null): string {
  return meta?.label?.normalized ?? "";
}
