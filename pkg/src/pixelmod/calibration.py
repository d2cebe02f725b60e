"""Ground-truth scoring, threshold grid search, and runtime benchmarks.

Evaluation runs the two-stage retrieval per labeled query and scores
accepted/rejected decisions against relevance judgments. Scoring is
restricted to pairs present in the ground truth; retrieved images nobody
labeled are ignored rather than guessed at.

The grid search sweeps hash kind, visual radius, text metric, and text
threshold. Stage-1 results are computed once per hash kind at that kind's
maximum grid radius and filtered down per cell, and text scores are cached
per metric, which changes no scores (covered by tests).
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import MissingImage, ValidationError
from .hashing import HashKind, PerceptualHash, decode_image, pdqhash256, phash64
from .index import BinaryIndex
from .ocr import OcrProvider, extract_label
from .pipeline import EmptyQueryPolicy, PipelineConfig
from .textsim import TextMetric, all_metrics, similarity


class CalibrationCorpus(Protocol):
    """Read-only corpus view: precomputed hashes plus cached labels."""

    def image_ids(self) -> list[str]: ...

    def hash_for(self, image_id: str, kind: HashKind) -> PerceptualHash: ...

    def label_for(self, image_id: str) -> str: ...


@dataclass(frozen=True)
class GtEntry:
    query_id: str
    candidate_id: str
    relevant: bool


@dataclass
class GroundTruthSet:
    entries: list[GtEntry]
    note: str = ""

    def __post_init__(self) -> None:
        pairs = {(e.query_id, e.candidate_id) for e in self.entries}
        if len(pairs) != len(self.entries):
            raise ValidationError("duplicate (query, candidate) pairs")
        flags = {e.relevant for e in self.entries}
        if flags != {True, False}:
            raise ValidationError("ground truth needs at least one positive "
                                  "and one negative entry")

    @property
    def query_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for e in self.entries:
            seen.setdefault(e.query_id)
        return list(seen)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["query_id", "candidate_id", "is_relevant"])
            for e in self.entries:
                writer.writerow([e.query_id, e.candidate_id,
                                 "1" if e.relevant else "0"])

    @classmethod
    def from_csv(cls, path: str | Path, note: str = "") -> "GroundTruthSet":
        entries = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["query_id", "candidate_id", "is_relevant"]:
                raise ValidationError(f"unexpected ground-truth header {header}")
            for row in reader:
                if len(row) != 3:
                    raise ValidationError(f"bad ground-truth row {row}")
                entries.append(GtEntry(row[0], row[1],
                                       row[2].strip() in ("1", "true", "True")))
        return cls(entries, note=note)


@dataclass(frozen=True)
class EvalScores:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> "EvalScores":
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        return cls(precision, recall, f1, tp, fp, fn, tn)

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall,
                "f1": self.f1, "tp": self.tp, "fp": self.fp, "fn": self.fn,
                "tn": self.tn}


@dataclass(frozen=True)
class GridSpec:
    """The default sweep: every radius the calibration protocol exercises,
    all four metrics (gram sizes 1..5 for Jaccard), thresholds 0 to 0.8 in
    steps of 0.05."""

    phash_radii: tuple[int, ...] = (4, 5, 6, 7, 8, 9, 10)
    pdq_radii: tuple[int, ...] = (32, 48, 64, 80, 90)
    textual_thresholds: tuple[float, ...] = tuple(round(0.05 * i, 2)
                                                  for i in range(17))
    metrics: tuple[TextMetric, ...] = tuple(all_metrics())

    def cells(self) -> list[PipelineConfig]:
        out = []
        for kind, radii in ((HashKind.PHASH64, self.phash_radii),
                            (HashKind.PDQ256, self.pdq_radii)):
            for radius in radii:
                for metric in self.metrics:
                    for theta in self.textual_thresholds:
                        out.append(PipelineConfig(
                            hash_kind=kind, theta_visual=radius,
                            text_metric=metric, theta_textual=theta))
        return out

    def max_radius(self, kind: HashKind) -> int:
        radii = self.phash_radii if kind is HashKind.PHASH64 else self.pdq_radii
        return max(radii)


# Best configuration and scores measured on the original labeled Twitter
# corpus; kept as a reference fixture, not reproducible from this repo.
REFERENCE_OPTIMUM = {
    "config": {"hash_kind": "pdq256", "theta_visual": 90,
               "text_metric": "jaccard:4", "theta_textual": 0.05},
    "f1": 0.980, "precision": 0.990, "recall": 0.979,
}

# Published baseline scores retained purely for formatting the comparison
# table in bench reports: (method, precision, recall, f1, runtime seconds).
REFERENCE_BASELINES: tuple[tuple[str, float, float, float, float], ...] = (
    ("inception-v3", 0.679, 0.878, 0.766, 0.031),
    ("resnet-50", 0.518, 0.938, 0.667, 0.027),
    ("resnet-101", 0.617, 0.932, 0.742, 0.030),
    ("resnet-152", 0.440, 0.962, 0.604, 0.034),
    ("orb descriptors", 0.491, 0.535, 0.512, 0.040),
    ("sift descriptors", 0.935, 0.0136, 0.026, 0.253),
    ("daisy descriptors", 0.484, 0.431, 0.456, 0.257),
    ("pdqhash (radius 32)", 0.992, 0.798, 0.885, 0.020),
    ("pdqhash (radius 40)", 0.975, 0.838, 0.901, 0.020),
    ("phash (radius 6)", 0.995, 0.596, 0.746, 0.017),
    ("phash (radius 8)", 0.991, 0.707, 0.826, 0.017),
    ("inception-v3 + sentence-bert", 0.711, 0.972, 0.820, 0.076),
    ("clip (post text)", 0.814, 0.787, 0.800, 0.149),
    ("clip (post text + ocr)", 0.862, 0.810, 0.835, 0.149),
    ("clip (ocr)", 0.883, 0.828, 0.855, 0.149),
    ("visual + ocr pipeline (reference)", 0.990, 0.979, 0.980, 0.223),
)


def _check_corpus(gt: GroundTruthSet, corpus: CalibrationCorpus) -> None:
    known = set(corpus.image_ids())
    for e in gt.entries:
        if e.query_id not in known:
            raise MissingImage(f"query {e.query_id} not in corpus")
        if e.candidate_id not in known:
            raise MissingImage(f"candidate {e.candidate_id} not in corpus")


def _build_index(corpus: CalibrationCorpus, kind: HashKind) -> BinaryIndex:
    index = BinaryIndex(kind)
    for image_id in corpus.image_ids():
        index.insert(image_id, corpus.hash_for(image_id, kind))
    return index


def _accepted_for_query(query_id: str, hits: list[tuple[str, int]],
                        config: PipelineConfig, corpus: CalibrationCorpus,
                        text_score: Callable[[str, str], float]) -> set[str]:
    """Candidate ids a config accepts for one query (positive decisions)."""
    label_q = corpus.label_for(query_id)
    in_radius = [c for c, d in hits
                 if d <= config.theta_visual and c != query_id]
    if not label_q:
        if config.empty_query_policy is EmptyQueryPolicy.ACCEPT_VISUAL_ONLY:
            return set(in_radius)
        return set()
    return {c for c in in_radius
            if text_score(query_id, c) >= config.theta_textual}


def _score_against_gt(gt: GroundTruthSet,
                      accepted: dict[str, set[str]]) -> EvalScores:
    tp = fp = fn = tn = 0
    for e in gt.entries:
        predicted = e.candidate_id in accepted.get(e.query_id, set())
        if predicted and e.relevant:
            tp += 1
        elif predicted and not e.relevant:
            fp += 1
        elif not predicted and e.relevant:
            fn += 1
        else:
            tn += 1
    return EvalScores.from_counts(tp, fp, fn, tn)


def evaluate(config: PipelineConfig, gt: GroundTruthSet,
             corpus: CalibrationCorpus,
             index: BinaryIndex | None = None) -> EvalScores:
    """Score one configuration against the ground truth.

    An accepted relevant pair is a true positive, an accepted irrelevant
    pair a false positive, a relevant pair not accepted (including never
    retrieved visually) a false negative.
    """
    _check_corpus(gt, corpus)
    if index is None:
        index = _build_index(corpus, config.hash_kind)
    metric = config.text_metric

    def text_score(query_id: str, candidate_id: str) -> float:
        return similarity(metric, corpus.label_for(query_id),
                          corpus.label_for(candidate_id))

    accepted: dict[str, set[str]] = {}
    for query_id in gt.query_ids:
        raw_hits = index.search_range(
            corpus.hash_for(query_id, config.hash_kind), config.theta_visual)
        hits = [(h.image_id, h.distance) for h in raw_hits]
        accepted[query_id] = _accepted_for_query(query_id, hits, config,
                                                 corpus, text_score)
    return _score_against_gt(gt, accepted)


def grid_search(spec: GridSpec, gt: GroundTruthSet,
                corpus: CalibrationCorpus) -> list[tuple[PipelineConfig, EvalScores]]:
    """Evaluate every grid cell; best F1 first, precision breaking ties.

    Each hash kind is searched once per query at its maximum grid radius;
    smaller radii reuse those hits filtered by distance. Text similarities
    are memoized per metric and pair.
    """
    _check_corpus(gt, corpus)
    queries = gt.query_ids

    hits_by_kind: dict[HashKind, dict[str, list[tuple[str, int]]]] = {}
    for kind, radii in ((HashKind.PHASH64, spec.phash_radii),
                        (HashKind.PDQ256, spec.pdq_radii)):
        if not radii:
            continue
        index = _build_index(corpus, kind)
        per_query = {}
        for query_id in queries:
            raw = index.search_range(corpus.hash_for(query_id, kind),
                                     spec.max_radius(kind))
            per_query[query_id] = [(h.image_id, h.distance) for h in raw]
        hits_by_kind[kind] = per_query

    sim_cache: dict[tuple[str, str, str], float] = {}

    def make_scorer(metric: TextMetric) -> Callable[[str, str], float]:
        key = metric.to_str()

        def text_score(query_id: str, candidate_id: str) -> float:
            cached = sim_cache.get((key, query_id, candidate_id))
            if cached is None:
                cached = similarity(metric, corpus.label_for(query_id),
                                    corpus.label_for(candidate_id))
                sim_cache[(key, query_id, candidate_id)] = cached
            return cached

        return text_score

    results = []
    for config in spec.cells():
        scorer = make_scorer(config.text_metric)
        accepted = {
            q: _accepted_for_query(q, hits_by_kind[config.hash_kind][q],
                                   config, corpus, scorer)
            for q in queries
        }
        results.append((config, _score_against_gt(gt, accepted)))
    results.sort(key=lambda pair: (
        -pair[1].f1, -pair[1].precision, pair[0].hash_kind.value,
        pair[0].theta_visual, pair[0].text_metric.to_str(),
        pair[0].theta_textual))
    return results


def grid_results_csv(results: list[tuple[PipelineConfig, EvalScores]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["hash_kind", "theta_visual", "text_metric",
                     "theta_textual", "f1", "precision", "recall",
                     "tp", "fp", "fn", "tn"])
    for config, scores in results:
        writer.writerow([config.hash_kind.value, config.theta_visual,
                         config.text_metric.to_str(), config.theta_textual,
                         f"{scores.f1:.6f}", f"{scores.precision:.6f}",
                         f"{scores.recall:.6f}", scores.tp, scores.fp,
                         scores.fn, scores.tn])
    return buf.getvalue()


def grid_results_json(results: list[tuple[PipelineConfig, EvalScores]]) -> str:
    return json.dumps([{"config": c.to_dict(), "scores": s.to_dict()}
                       for c, s in results], indent=2)


# ---------------------------------------------------------------------------
# benchmarking


@dataclass
class BenchReport:
    sample_size: int
    runs: int
    hash_index_mean_s: dict[str, float]
    ocr_mean_s: float
    ocr_p50_s: float
    ocr_p90_s: float
    ocr_coverage_pearson_r: float | None
    ocr_latencies_s: tuple[float, ...] = ()
    coverages: tuple = ()  # per-sample coverage or None, aligned with latencies
    reference_rows: tuple = REFERENCE_BASELINES

    def to_dict(self) -> dict:
        return {
            "sample_size": self.sample_size,
            "runs": self.runs,
            "hash_index_mean_s": self.hash_index_mean_s,
            "ocr_mean_s": self.ocr_mean_s,
            "ocr_p50_s": self.ocr_p50_s,
            "ocr_p90_s": self.ocr_p90_s,
            "ocr_coverage_pearson_r": self.ocr_coverage_pearson_r,
        }

    def comparison_table(self) -> str:
        """Measured numbers next to the published reference figures."""
        lines = [f"{'method':<36} {'prec':>6} {'rec':>6} {'f1':>6} {'runtime':>9}"]
        for method, precision, recall, f1, runtime in self.reference_rows:
            lines.append(f"{method:<36} {precision:>6.3f} {recall:>6.3f} "
                         f"{f1:>6.3f} {runtime:>8.3f}s")
        lines.append("")
        for kind, mean_s in self.hash_index_mean_s.items():
            lines.append(f"{'measured hash+index (' + kind + ')':<36} "
                         f"{'':>6} {'':>6} {'':>6} {mean_s:>8.3f}s")
        lines.append(f"{'measured ocr extraction':<36} {'':>6} {'':>6} {'':>6} "
                     f"{self.ocr_mean_s:>8.3f}s")
        r = self.ocr_coverage_pearson_r
        lines.append(f"ocr latency vs text coverage r = "
                     f"{'n/a' if r is None else format(r, '.3f')}")
        return "\n".join(lines)


def pearson_r(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    """Pearson correlation; None when either side has zero variance."""
    if len(xs) < 2:
        return None
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if float(x.std()) == 0.0 or float(y.std()) == 0.0:
        return None
    return float(np.corrcoef(x, y)[0, 1])


def bench(samples: list[tuple[bytes, Path | None]], provider: OcrProvider,
          runs: int = 5) -> BenchReport:
    """Time hashing/indexing and OCR over a corpus sample.

    Hash+index timing is averaged over ``runs`` independent passes. The
    correlation column relates per-image OCR latency to reported text
    coverage and is absent when the provider reports no coverage.
    """
    if len(samples) < 30:
        raise ValidationError("bench needs a sample of at least 30 images")

    hash_means: dict[str, float] = {}
    for kind, hasher in ((HashKind.PHASH64, phash64), (HashKind.PDQ256,
                                                       pdqhash256)):
        totals = []
        for _ in range(runs):
            index = BinaryIndex(kind)
            start = time.perf_counter()
            for pos, (data, _) in enumerate(samples):
                index.insert(str(pos), hasher(decode_image(data)))
            totals.append((time.perf_counter() - start) / len(samples))
        hash_means[kind.value] = float(np.mean(totals))

    latencies: list[float] = []
    coverages: list[float | None] = []
    for data, path in samples:
        start = time.perf_counter()
        label = extract_label(data, provider, path)
        latencies.append(time.perf_counter() - start)
        coverages.append(label.coverage)

    with_cov = [(lat, cov) for lat, cov in zip(latencies, coverages)
                if cov is not None]
    r = pearson_r([lat for lat, _ in with_cov],
                  [cov for _, cov in with_cov]) if len(with_cov) >= 2 else None
    arr = np.asarray(latencies)
    return BenchReport(
        sample_size=len(samples), runs=runs, hash_index_mean_s=hash_means,
        ocr_mean_s=float(arr.mean()), ocr_p50_s=float(np.percentile(arr, 50)),
        ocr_p90_s=float(np.percentile(arr, 90)),
        ocr_coverage_pearson_r=r,
        ocr_latencies_s=tuple(latencies), coverages=tuple(coverages))
