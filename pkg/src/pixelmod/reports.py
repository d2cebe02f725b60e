"""Figure rendering for the CLI report paths.

Each function writes one PNG next to the delimited output and returns the
path. Matplotlib runs headless (Agg); figures are deterministic given the
same inputs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .calibration import BenchReport, EvalScores  # noqa: E402
from .hashing import HashKind  # noqa: E402
from .pipeline import PipelineConfig  # noqa: E402
from .stories import CategoryReportRow  # noqa: E402

_FIGSIZE = (7.0, 4.4)


def render_grid_figure(results: list[tuple[PipelineConfig, EvalScores]],
                       out_path: str | Path) -> Path:
    """F1 against the text threshold, one curve per hash kind and radius.

    For each (kind, radius, threshold) cell the best-scoring text metric is
    plotted, which keeps the figure readable at full grid size.
    """
    best: dict[tuple[HashKind, int], dict[float, float]] = {}
    for config, scores in results:
        curve = best.setdefault((config.hash_kind, config.theta_visual), {})
        theta = config.theta_textual
        if scores.f1 > curve.get(theta, -1.0):
            curve[theta] = scores.f1

    fig, ax = plt.subplots(figsize=_FIGSIZE)
    for (kind, radius), curve in sorted(best.items(),
                                        key=lambda kv: (kv[0][0].value, kv[0][1])):
        thetas = sorted(curve)
        style = "-" if kind is HashKind.PDQ256 else "--"
        ax.plot(thetas, [curve[t] for t in thetas], style, marker="o",
                markersize=3, label=f"{kind.value} r={radius}")
    ax.set_xlabel("text similarity threshold")
    ax.set_ylabel("F1 (best metric per cell)")
    ax.set_ylim(-0.02, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path


def render_latency_figure(report: BenchReport, out_path: str | Path) -> Path:
    """Scatter of OCR latency against the fraction of image area under text."""
    points = [(cov, lat) for lat, cov in
              zip(report.ocr_latencies_s, report.coverages) if cov is not None]
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    if points:
        ax.scatter([c for c, _ in points], [lat for _, lat in points],
                   s=14, alpha=0.7)
        r = report.ocr_coverage_pearson_r
        ax.set_title("OCR latency vs text coverage"
                     + (f"  (r = {r:.3f})" if r is not None else ""))
    else:
        ax.set_title("OCR latency (provider reports no coverage)")
        ax.hist(report.ocr_latencies_s, bins=20)
    ax.set_xlabel("fraction of image covered by text"
                  if points else "latency (s)")
    ax.set_ylabel("latency (s)" if points else "images")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path


def render_category_figure(rows: list[CategoryReportRow],
                           out_path: str | Path) -> Path:
    """Moderated share per policy category, story counts annotated."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    labels = [r.category_label for r in rows]
    values = [100.0 * r.moderated_members / r.total_members
              if r.total_members else 0.0 for r in rows]
    bars = ax.bar(range(len(rows)), values, color="#4878a8")
    for bar, row in zip(bars, rows):
        ax.annotate(f"{row.story_count} stories",
                    (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=8)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=18, ha="right", fontsize=8)
    ax.set_ylabel("moderated members (%)")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path
