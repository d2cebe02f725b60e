/** Payload shapes of the /v1 JSON API. The UI renders these verbatim and
 *  performs no inference of its own. */

export type Decision =
  | "accepted"
  | "accepted_visual_only"
  | "errored"
  | "rejected_text";

export interface ProvenanceEntry {
  query_id: string;
  distance: number;
  text_similarity: number | null;
  decision: Decision;
}

export interface Candidate {
  schema_version: number;
  image_id: string;
  distance: number;
  text_similarity: number | null;
  decision: Decision;
  query_id: string;
  provenance?: ProvenanceEntry[];
}

export interface CandidatePage {
  items: Candidate[];
  page: number;
  page_size: number;
  total: number;
  pages: number;
}

export interface ImageLabel {
  raw: string;
  normalized: string;
  coverage: number | null;
}

export interface ImageMeta {
  image_id: string;
  storage_path: string | null;
  phash64: string;
  pdq256: string;
  pdq_quality: number;
  label: ImageLabel | null;
  ingested_at: string;
}

export interface Story {
  story_id: number;
  members: string[];
  representative: string;
  category: string | null;
  moderated_count: number;
  size: number;
}

export interface StoriesResponse {
  eps: number | null;
  built: boolean;
  stories: Story[];
}

export interface PromoteTarget {
  seed_set: string;
  expected_version?: number;
}

export interface ReviewAction {
  query_id: string;
  image_id: string;
  verdict: "approve" | "dismiss";
  reviewer: string;
  note?: string;
  promote_to_seed?: PromoteTarget;
}

export interface ReviewResponse {
  review_id: number;
  verdict: string;
  seed_set?: string;
  seed_set_version?: number;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  details?: unknown;
}
