/** DOM rendering for the queue and comparison panes.
 *
 * Renders only data served by the API; no moderation decision happens
 * without an explicit click or key press.
 */

import { ApiClient } from "./api.js";
import { buildComparison, Comparison } from "./compare.js";
import { QueueModel } from "./queue.js";
import type { Decision } from "./types.js";

const TIER_LABELS: Record<Decision, string> = {
  accepted: "accepted",
  accepted_visual_only: "visual only",
  errored: "ocr error",
  rejected_text: "rejected (text)",
};

const TIER_FILTERS: Array<Decision | undefined> = [
  undefined,
  "accepted",
  "accepted_visual_only",
  "errored",
];

export class App {
  private comparison: Comparison | null = null;
  private comparisonFor: string | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    private readonly model: QueueModel,
  ) {
    model.onChange(() => {
      this.render();
      void this.refreshComparison();
    });
  }

  bindKeyboard(target: Pick<Document, "addEventListener">): void {
    target.addEventListener("keydown", (event: Event) => {
      const key = (event as KeyboardEvent).key;
      if (key === "j") this.model.moveSelection(1);
      else if (key === "k") this.model.moveSelection(-1);
      else if (key === "a") void this.model.approve(false);
      else if (key === "p") void this.model.approve(true);
      else if (key === "d") void this.model.dismiss();
    });
  }

  private async refreshComparison(): Promise<void> {
    const item = this.model.selectedItem;
    if (!item) {
      this.comparison = null;
      this.comparisonFor = null;
      this.renderComparison();
      return;
    }
    if (this.comparisonFor === item.image_id) return;
    this.comparisonFor = item.image_id;
    this.comparison = await buildComparison(this.api, item);
    this.renderComparison();
  }

  render(): void {
    const doc = this.root.ownerDocument;
    this.root.textContent = "";

    const banner = doc.createElement("div");
    banner.className = "banner";
    if (this.model.offline) {
      banner.classList.add("offline");
      banner.textContent = "service unreachable - retry when back online";
    } else if (this.model.lastError) {
      banner.classList.add("error");
      banner.textContent = this.model.lastError;
    }
    this.root.appendChild(banner);

    if (this.model.lastSeedSetVersion !== null) {
      const version = doc.createElement("div");
      version.className = "seed-version";
      version.textContent =
        `seed set now at version ${this.model.lastSeedSetVersion}`;
      this.root.appendChild(version);
    }

    this.root.appendChild(this.renderFilters(doc));

    const list = doc.createElement("ul");
    list.className = "queue";
    this.model.items.forEach((item, index) => {
      const row = doc.createElement("li");
      row.className = "candidate-row";
      row.dataset["imageId"] = item.image_id;
      if (index === this.model.selected) row.classList.add("selected");

      const thumb = doc.createElement("img");
      thumb.className = "thumb";
      thumb.loading = "lazy";
      thumb.src = this.api.imageUrl(item.image_id);
      row.appendChild(thumb);

      const meta = doc.createElement("span");
      meta.className = "row-meta";
      const sim = item.text_similarity === null
        ? "-"
        : item.text_similarity.toFixed(3);
      meta.textContent =
        `${item.image_id.slice(0, 12)}  d=${item.distance}  sim=${sim}`;
      row.appendChild(meta);

      const badge = doc.createElement("span");
      badge.className = `tier tier-${item.decision}`;
      badge.textContent = TIER_LABELS[item.decision];
      row.appendChild(badge);

      const approve = doc.createElement("button");
      approve.className = "approve";
      approve.textContent = "approve";
      approve.addEventListener("click", () => {
        this.select(index);
        void this.model.approve(false);
      });
      row.appendChild(approve);

      const promote = doc.createElement("button");
      promote.className = "approve-promote";
      promote.textContent = "approve + seed";
      promote.addEventListener("click", () => {
        this.select(index);
        void this.model.approve(true);
      });
      row.appendChild(promote);

      const dismiss = doc.createElement("button");
      dismiss.className = "dismiss";
      dismiss.textContent = "dismiss";
      dismiss.addEventListener("click", () => {
        this.select(index);
        void this.model.dismiss();
      });
      row.appendChild(dismiss);

      row.addEventListener("click", () => this.select(index));
      list.appendChild(row);
    });
    this.root.appendChild(list);

    const pager = doc.createElement("div");
    pager.className = "pager";
    pager.textContent =
      `page ${this.model.page}/${this.model.pages} - ${this.model.total} candidates`;
    const prev = doc.createElement("button");
    prev.textContent = "prev";
    prev.disabled = this.model.page <= 1;
    prev.addEventListener("click", () => void this.model.load(this.model.page - 1));
    const next = doc.createElement("button");
    next.textContent = "next";
    next.disabled = this.model.page >= this.model.pages;
    next.addEventListener("click", () => void this.model.load(this.model.page + 1));
    pager.appendChild(prev);
    pager.appendChild(next);
    this.root.appendChild(pager);

    const compare = doc.createElement("div");
    compare.className = "comparison";
    this.root.appendChild(compare);
    this.renderComparison();
  }

  private select(index: number): void {
    this.model.moveSelection(index - this.model.selected);
  }

  private renderFilters(doc: Document): HTMLElement {
    const bar = doc.createElement("div");
    bar.className = "filters";
    for (const tier of TIER_FILTERS) {
      const button = doc.createElement("button");
      button.className = "filter";
      button.dataset["tier"] = tier ?? "all";
      button.textContent = tier ? TIER_LABELS[tier] : "all";
      if (this.model.filters.tier === tier) button.classList.add("active");
      button.addEventListener("click", () => {
        void this.model.setFilters({ ...this.model.filters, tier });
      });
      bar.appendChild(button);
    }
    return bar;
  }

  renderComparison(): void {
    const doc = this.root.ownerDocument;
    const host = this.root.querySelector(".comparison");
    if (!host) return;
    host.textContent = "";
    const view = this.comparison;
    if (!view) return;

    const images = doc.createElement("div");
    images.className = "side-by-side";
    for (const [cls, url] of [["seed", view.seedImageUrl],
                              ["match", view.matchImageUrl]] as const) {
      const img = doc.createElement("img");
      img.className = cls;
      img.loading = "lazy";
      img.src = url;
      img.addEventListener("error", () => {
        img.replaceWith(placeholder(doc, `${cls} image unavailable`));
      });
      images.appendChild(img);
    }
    host.appendChild(images);

    const stats = doc.createElement("div");
    stats.className = "stats";
    const simText = view.similarity === null ? "n/a"
      : view.similarity.toFixed(4);
    stats.innerHTML =
      `<span class="distance">hamming ${view.distance}</span> ` +
      `<span class="similarity${view.rejectedOnText ? " below-threshold" : ""}">` +
      `text ${simText}</span>`;
    host.appendChild(stats);

    if (view.errored) {
      const panel = doc.createElement("div");
      panel.className = "ocr-error";
      panel.textContent = "OCR unavailable for this image";
      const retry = doc.createElement("button");
      retry.className = "retry";
      retry.textContent = "retry";
      retry.addEventListener("click", () => {
        this.comparisonFor = null;
        void this.refreshComparison();
      });
      panel.appendChild(retry);
      host.appendChild(panel);
      return;
    }

    const diff = doc.createElement("div");
    diff.className = "diff";
    for (const segment of view.diff) {
      const span = doc.createElement("span");
      span.className = `diff-${segment.kind}`;
      span.textContent = segment.text;
      diff.appendChild(span);
    }
    host.appendChild(diff);
  }
}

function placeholder(doc: Document, text: string): HTMLElement {
  const div = doc.createElement("div");
  div.className = "placeholder";
  div.textContent = text;
  return div;
}
