/** Thin typed client for the /v1 API.
 *
 * The fetch function is injectable so tests can run against a fixture
 * service; nothing here issues a request on construction.
 */

import type {
  ApiErrorBody,
  CandidatePage,
  Decision,
  ImageMeta,
  ReviewAction,
  ReviewResponse,
  StoriesResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

export class NetworkError extends Error {}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface CandidateQuery {
  jobId: string;
  page?: number;
  pageSize?: number;
  tier?: Decision;
  storyId?: number;
  maxDistance?: number;
}

export class ApiClient {
  private readonly fetchFn: FetchLike;

  constructor(
    public readonly baseUrl: string,
    private readonly token: string = "",
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? ((url, init) => fetch(url, init));
  }

  imageUrl(imageId: string): string {
    return `${this.baseUrl}/v1/images/${imageId}`;
  }

  async candidates(query: CandidateQuery): Promise<CandidatePage> {
    const params = new URLSearchParams({ query: query.jobId });
    params.set("page", String(query.page ?? 1));
    params.set("page_size", String(query.pageSize ?? 50));
    if (query.tier) params.set("tier", query.tier);
    if (query.storyId !== undefined) params.set("story", String(query.storyId));
    if (query.maxDistance !== undefined)
      params.set("max_distance", String(query.maxDistance));
    return this.request<CandidatePage>(`/v1/candidates?${params}`);
  }

  async imageMeta(imageId: string): Promise<ImageMeta> {
    return this.request<ImageMeta>(`/v1/images/${imageId}/meta`);
  }

  async stories(): Promise<StoriesResponse> {
    return this.request<StoriesResponse>("/v1/stories");
  }

  async review(action: ReviewAction): Promise<ReviewResponse> {
    return this.request<ReviewResponse>("/v1/review", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(action),
    });
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const headers = new Headers(init?.headers);
    if (this.token) headers.set("Authorization", `Bearer ${this.token}`);
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}${path}`, {
        ...init,
        headers,
      });
    } catch (err) {
      throw new NetworkError(String(err));
    }
    if (!response.ok) {
      let body: Partial<ApiErrorBody> = {};
      try {
        body = (await response.json()) as ApiErrorBody;
      } catch {
        // non-JSON error body; keep defaults
      }
      throw new ApiError(
        response.status,
        body.code ?? "error",
        body.message ?? `HTTP ${response.status}`,
      );
    }
    return (await response.json()) as T;
  }
}
