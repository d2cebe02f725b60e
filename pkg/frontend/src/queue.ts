/** Review-queue view model: pagination, filters, selection, and the
 * approve/dismiss flow with optimistic updates.
 *
 * Every state change is driven by an explicit method call; constructing
 * the model performs no requests, and loading issues only GETs. A failed
 * mutation restores the removed row and records the error.
 */

import { ApiClient, ApiError, NetworkError } from "./api.js";
import type { Candidate, Decision, ReviewAction } from "./types.js";

export interface QueueFilters {
  tier?: Decision;
  storyId?: number;
  maxDistance?: number;
}

export interface QueueOptions {
  jobId: string;
  reviewer: string;
  seedSet?: string;
  pageSize?: number;
}

export class QueueModel {
  items: Candidate[] = [];
  page = 1;
  pages = 1;
  total = 0;
  filters: QueueFilters = {};
  selected = 0;
  offline = false;
  lastError: string | null = null;
  lastSeedSetVersion: number | null = null;
  private listeners: Array<() => void> = [];

  constructor(
    private readonly api: ApiClient,
    private readonly options: QueueOptions,
  ) {}

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  get selectedItem(): Candidate | null {
    return this.items[this.selected] ?? null;
  }

  async load(page = 1): Promise<void> {
    try {
      const result = await this.api.candidates({
        jobId: this.options.jobId,
        page,
        pageSize: this.options.pageSize ?? 50,
        tier: this.filters.tier,
        storyId: this.filters.storyId,
        maxDistance: this.filters.maxDistance,
      });
      this.items = result.items;
      this.page = result.page;
      this.pages = result.pages;
      this.total = result.total;
      this.selected = Math.min(this.selected, Math.max(0, this.items.length - 1));
      this.offline = false;
      this.lastError = null;
    } catch (err) {
      this.applyFailure(err);
    }
    this.notify();
  }

  async setFilters(filters: QueueFilters): Promise<void> {
    this.filters = { ...filters };
    this.selected = 0;
    await this.load(1);
  }

  moveSelection(delta: number): void {
    if (!this.items.length) return;
    this.selected = Math.min(
      this.items.length - 1,
      Math.max(0, this.selected + delta),
    );
    this.notify();
  }

  async approve(promote = false): Promise<void> {
    await this.submitVerdict("approve", promote);
  }

  async dismiss(): Promise<void> {
    await this.submitVerdict("dismiss", false);
  }

  private async submitVerdict(
    verdict: "approve" | "dismiss",
    promote: boolean,
  ): Promise<void> {
    const item = this.selectedItem;
    if (!item) return;
    const position = this.selected;
    // optimistic removal; restored below if the service refuses
    this.items = this.items.filter((_, idx) => idx !== position);
    this.selected = Math.min(position, Math.max(0, this.items.length - 1));
    this.total = Math.max(0, this.total - 1);
    this.notify();

    const action: ReviewAction = {
      query_id: item.query_id,
      image_id: item.image_id,
      verdict,
      reviewer: this.options.reviewer,
    };
    if (promote && verdict === "approve") {
      if (!this.options.seedSet) {
        this.rollback(item, position, "no seed set configured for promotion");
        return;
      }
      action.promote_to_seed = { seed_set: this.options.seedSet };
    }
    try {
      const response = await this.api.review(action);
      if (response.seed_set_version !== undefined) {
        this.lastSeedSetVersion = response.seed_set_version;
      }
      this.lastError = null;
      this.offline = false;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.rollback(item, position, "item already reviewed");
      } else if (err instanceof ApiError) {
        this.rollback(item, position, err.message);
      } else {
        this.rollback(item, position, "service unreachable");
        this.offline = true;
      }
    }
    this.notify();
  }

  private rollback(item: Candidate, position: number, message: string): void {
    const restored = [...this.items];
    restored.splice(Math.min(position, restored.length), 0, item);
    this.items = restored;
    this.selected = position;
    this.total += 1;
    this.lastError = message;
  }

  private applyFailure(err: unknown): void {
    if (err instanceof NetworkError) {
      this.offline = true;
      this.lastError = "service unreachable";
    } else if (err instanceof ApiError) {
      this.lastError = err.message;
    } else {
      this.lastError = String(err);
    }
  }
}
