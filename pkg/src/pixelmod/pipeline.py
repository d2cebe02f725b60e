"""Two-stage retrieval: visual range search, then OCR-text refinement.

Stage 1 hashes the seed image and pulls every corpus record within the
visual radius. Stage 2 extracts the seed's overlay text; when it is
non-empty, each visual match is kept only if its own label scores at least
``theta_textual`` under the configured text metric. Seeds without overlay
text fall back to the configured empty-query policy.

OCR failures on individual matches never abort a query; the affected
candidate is marked ERRORED and surfaced for manual review.
"""

from __future__ import annotations

import enum
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

from .errors import KindMismatch, PixelmodError
from .hashing import HashKind, PerceptualHash, decode_image, pdqhash256, phash64
from .index import BinaryIndex, SearchHit
from .ocr import DEFAULT_INFLIGHT_LIMIT, LabelCache, OcrLabel, OcrProvider
from .textsim import MetricKind, TextMetric, similarity

CANDIDATE_SCHEMA_VERSION = 1


class EmptyQueryPolicy(enum.Enum):
    ACCEPT_VISUAL_ONLY = "accept_visual_only"
    REJECT_ALL = "reject_all"


class Decision(enum.Enum):
    ACCEPTED = "accepted"
    ACCEPTED_VISUAL_ONLY = "accepted_visual_only"
    ERRORED = "errored"
    REJECTED_TEXT = "rejected_text"

    @property
    def sort_rank(self) -> int:
        return _DECISION_RANK[self]

    @property
    def is_positive(self) -> bool:
        return self in (Decision.ACCEPTED, Decision.ACCEPTED_VISUAL_ONLY)


_DECISION_RANK = {
    Decision.ACCEPTED: 0,
    Decision.ACCEPTED_VISUAL_ONLY: 1,
    Decision.ERRORED: 2,
    Decision.REJECTED_TEXT: 3,
}


@dataclass(frozen=True)
class PipelineConfig:
    """The tunable surface of the retrieval pipeline."""

    hash_kind: HashKind = HashKind.PDQ256
    theta_visual: int = 90
    text_metric: TextMetric = TextMetric(MetricKind.JACCARD_NGRAM, 4)
    theta_textual: float = 0.05
    empty_query_policy: EmptyQueryPolicy = EmptyQueryPolicy.ACCEPT_VISUAL_ONLY

    def __post_init__(self) -> None:
        if not 0 <= self.theta_visual <= self.hash_kind.bit_length:
            raise ValueError(f"theta_visual must be in [0, {self.hash_kind.bit_length}]")
        if not 0.0 <= self.theta_textual <= 1.0:
            raise ValueError("theta_textual must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "hash_kind": self.hash_kind.value,
            "theta_visual": self.theta_visual,
            "text_metric": self.text_metric.to_str(),
            "theta_textual": self.theta_textual,
            "empty_query_policy": self.empty_query_policy.value,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        base = cls()
        return cls(
            hash_kind=HashKind(doc.get("hash_kind", base.hash_kind.value)),
            theta_visual=int(doc.get("theta_visual", base.theta_visual)),
            text_metric=TextMetric.from_str(doc.get("text_metric",
                                                    base.text_metric.to_str())),
            theta_textual=float(doc.get("theta_textual", base.theta_textual)),
            empty_query_policy=EmptyQueryPolicy(
                doc.get("empty_query_policy", base.empty_query_policy.value)),
        )

    def describe(self) -> str:
        return (f"{self.hash_kind.value} r={self.theta_visual} "
                f"{self.text_metric} t={self.theta_textual:g}")


@dataclass(frozen=True)
class ModerationCandidate:
    image_id: str
    distance: int
    text_similarity: float | None
    decision: Decision
    query_id: str

    def sort_key(self) -> tuple:
        return (self.decision.sort_rank, self.distance, self.image_id)

    def to_dict(self) -> dict:
        return {
            "schema_version": CANDIDATE_SCHEMA_VERSION,
            "image_id": self.image_id,
            "distance": self.distance,
            "text_similarity": self.text_similarity,
            "decision": self.decision.value,
            "query_id": self.query_id,
        }


@dataclass
class StageTimings:
    """Per-stage wall time in milliseconds."""

    hash_ms: float = 0.0
    search_ms: float = 0.0
    ocr_ms: float = 0.0
    text_ms: float = 0.0

    def to_dict(self) -> dict:
        return {"hash_ms": self.hash_ms, "search_ms": self.search_ms,
                "ocr_ms": self.ocr_ms, "text_ms": self.text_ms}


@dataclass
class QueryReport:
    query_id: str
    visual_match_count: int = 0
    accepted_count: int = 0
    rejected_count: int = 0
    visual_only_count: int = 0
    errored_count: int = 0
    ocr_calls_made: int = 0
    timings: StageTimings = field(default_factory=StageTimings)
    errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "visual_match_count": self.visual_match_count,
            "accepted_count": self.accepted_count,
            "rejected_count": self.rejected_count,
            "visual_only_count": self.visual_only_count,
            "errored_count": self.errored_count,
            "ocr_calls_made": self.ocr_calls_made,
            "timings": self.timings.to_dict(),
            "errors": list(self.errors),
        }


class ImageSource(Protocol):
    """Resolves a corpus image id to its bytes and on-disk path."""

    def image_payload(self, image_id: str) -> tuple[bytes, Path | None]: ...


@dataclass(frozen=True)
class SeedImage:
    """A query-side image, optionally tied to a corpus record."""

    query_id: str
    data: bytes
    path: Path | None = None
    corpus_id: str | None = None


@dataclass(frozen=True)
class PrehashedSeed:
    """A query-side record known only by hash and stored label text.

    Imported seed sets carry hashes and label text but no image bytes; this
    form lets them still drive retrieval.
    """

    query_id: str
    seed_hash: PerceptualHash
    label: OcrLabel
    corpus_id: str | None = None


def hash_for(plane_bytes: bytes, kind: HashKind) -> PerceptualHash:
    plane = decode_image(plane_bytes)
    return phash64(plane) if kind is HashKind.PHASH64 else pdqhash256(plane)


def query(
    seed: SeedImage,
    config: PipelineConfig,
    index: BinaryIndex,
    provider: OcrProvider,
    cache: LabelCache,
    images: ImageSource,
) -> tuple[list[ModerationCandidate], QueryReport]:
    """Run one seed through both stages; returns candidates plus accounting.

    The seed's own corpus record (matched by id, not by hash) is excluded so
    duplicate uploads of the seed elsewhere in the corpus still surface.
    """
    report = QueryReport(query_id=seed.query_id)
    t0 = time.perf_counter()
    seed_hash = hash_for(seed.data, config.hash_kind)
    report.timings.hash_ms = (time.perf_counter() - t0) * 1000.0

    def seed_label() -> OcrLabel:
        label, was_hit = cache.get_or_extract(seed_hash, seed.data, provider,
                                              seed.path)
        if not was_hit:
            report.ocr_calls_made += 1
        return label

    return _query_stage2(seed.query_id, seed_hash, seed_label, seed.corpus_id,
                         config, index, provider, cache, images, report)


def query_from_record(
    seed: PrehashedSeed,
    config: PipelineConfig,
    index: BinaryIndex,
    provider: OcrProvider,
    cache: LabelCache,
    images: ImageSource,
) -> tuple[list[ModerationCandidate], QueryReport]:
    """Like ``query`` but the seed hash and label are already known."""
    if seed.seed_hash.kind is not config.hash_kind:
        raise KindMismatch(f"seed hash is {seed.seed_hash.kind.name}, config "
                           f"wants {config.hash_kind.name}")
    report = QueryReport(query_id=seed.query_id)
    return _query_stage2(seed.query_id, seed.seed_hash, lambda: seed.label,
                         seed.corpus_id, config, index, provider, cache,
                         images, report)


def _query_stage2(
    query_id: str,
    seed_hash: PerceptualHash,
    seed_label_fn,
    exclude_id: str | None,
    config: PipelineConfig,
    index: BinaryIndex,
    provider: OcrProvider,
    cache: LabelCache,
    images: ImageSource,
    report: QueryReport,
) -> tuple[list[ModerationCandidate], QueryReport]:
    t0 = time.perf_counter()
    hits = index.search_range(seed_hash, config.theta_visual)
    if exclude_id is not None:
        hits = [h for h in hits if h.image_id != exclude_id]
    report.timings.search_ms = (time.perf_counter() - t0) * 1000.0
    report.visual_match_count = len(hits)
    if not hits:
        return [], report

    t0 = time.perf_counter()
    seed_label = seed_label_fn()
    report.timings.ocr_ms = (time.perf_counter() - t0) * 1000.0

    if seed_label.is_empty:
        candidates = _apply_empty_policy(hits, config, query_id)
    else:
        candidates = _refine(hits, seed_label.normalized, config, index,
                             provider, cache, images, query_id, report)

    for cand in candidates:
        if cand.decision is Decision.ACCEPTED:
            report.accepted_count += 1
        elif cand.decision is Decision.REJECTED_TEXT:
            report.rejected_count += 1
        elif cand.decision is Decision.ACCEPTED_VISUAL_ONLY:
            report.visual_only_count += 1
        else:
            report.errored_count += 1
    candidates.sort(key=ModerationCandidate.sort_key)
    return candidates, report


def _apply_empty_policy(hits: list[SearchHit], config: PipelineConfig,
                        query_id: str) -> list[ModerationCandidate]:
    if config.empty_query_policy is EmptyQueryPolicy.ACCEPT_VISUAL_ONLY:
        return [ModerationCandidate(h.image_id, h.distance, None,
                                    Decision.ACCEPTED_VISUAL_ONLY, query_id)
                for h in hits]
    # REJECT_ALL: an absent query label matches nothing, scored as 0.
    return [ModerationCandidate(h.image_id, h.distance, 0.0,
                                Decision.REJECTED_TEXT, query_id)
            for h in hits]


def _refine(hits: list[SearchHit], query_label: str, config: PipelineConfig,
            index: BinaryIndex, provider: OcrProvider, cache: LabelCache,
            images: ImageSource, query_id: str,
            report: QueryReport) -> list[ModerationCandidate]:
    t0 = time.perf_counter()
    count_lock = threading.Lock()

    def score(hit: SearchHit) -> ModerationCandidate:
        match_hash = index.hash_of(hit.image_id)
        data, path = images.image_payload(hit.image_id)
        label, was_hit = cache.get_or_extract(match_hash, data, provider, path)
        if not was_hit:
            with count_lock:
                report.ocr_calls_made += 1
        sim = similarity(config.text_metric, query_label, label.normalized)
        decision = (Decision.ACCEPTED if sim >= config.theta_textual
                    else Decision.REJECTED_TEXT)
        return ModerationCandidate(hit.image_id, hit.distance, sim, decision,
                                   query_id)

    candidates: list[ModerationCandidate] = []
    workers = max(1, min(DEFAULT_INFLIGHT_LIMIT, len(hits)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(score, h): h for h in hits}
        for fut, hit in futures.items():
            try:
                candidates.append(fut.result())
            except PixelmodError as exc:
                report.errors.append(f"{hit.image_id}: {exc}")
                candidates.append(ModerationCandidate(
                    hit.image_id, hit.distance, None, Decision.ERRORED, query_id))
    report.timings.ocr_ms += (time.perf_counter() - t0) * 1000.0
    report.timings.text_ms = 0.0  # folded into the fan-out above
    return candidates


@dataclass(frozen=True)
class ProvenanceEntry:
    query_id: str
    distance: int
    text_similarity: float | None
    decision: Decision

    def to_dict(self) -> dict:
        return {"query_id": self.query_id, "distance": self.distance,
                "text_similarity": self.text_similarity,
                "decision": self.decision.value}


@dataclass(frozen=True)
class BatchCandidate:
    """One corpus image with its best decision and full per-seed provenance."""

    image_id: str
    decision: Decision
    distance: int
    text_similarity: float | None
    query_id: str  # seed that produced the best decision
    provenance: tuple[ProvenanceEntry, ...]

    def sort_key(self) -> tuple:
        return (self.decision.sort_rank, self.distance, self.image_id)

    def to_dict(self) -> dict:
        return {
            "schema_version": CANDIDATE_SCHEMA_VERSION,
            "image_id": self.image_id,
            "distance": self.distance,
            "text_similarity": self.text_similarity,
            "decision": self.decision.value,
            "query_id": self.query_id,
            "provenance": [p.to_dict() for p in self.provenance],
        }


@dataclass
class BatchResult:
    candidates: list[BatchCandidate]
    reports: dict[str, QueryReport]
    failed_seeds: dict[str, str]


def batch_query(
    seeds: Iterable[SeedImage | PrehashedSeed],
    config: PipelineConfig,
    index: BinaryIndex,
    provider: OcrProvider,
    cache: LabelCache,
    images: ImageSource,
) -> BatchResult:
    """Union of per-seed candidates, deduplicated per corpus image.

    An image accepted under any seed stays accepted; provenance keeps every
    matching seed. The shared cache guarantees OCR runs at most once per
    unique image hash across the whole batch. Individual seed failures are
    collected; the batch only fails when every seed fails.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("seed set is empty")
    by_image: dict[str, list[ProvenanceEntry]] = {}
    reports: dict[str, QueryReport] = {}
    failures: dict[str, str] = {}
    for seed in seeds:
        runner = query_from_record if isinstance(seed, PrehashedSeed) else query
        try:
            cands, report = runner(seed, config, index, provider, cache, images)
        except PixelmodError as exc:
            failures[seed.query_id] = str(exc)
            continue
        reports[seed.query_id] = report
        for cand in cands:
            by_image.setdefault(cand.image_id, []).append(ProvenanceEntry(
                cand.query_id, cand.distance, cand.text_similarity, cand.decision))
    if not reports:
        raise PixelmodError(f"all seeds failed: {failures}")

    merged: list[BatchCandidate] = []
    for image_id, entries in by_image.items():
        entries.sort(key=lambda e: (e.decision.sort_rank, e.distance, e.query_id))
        best = entries[0]
        merged.append(BatchCandidate(
            image_id=image_id, decision=best.decision, distance=best.distance,
            text_similarity=best.text_similarity, query_id=best.query_id,
            provenance=tuple(entries)))
    merged.sort(key=BatchCandidate.sort_key)
    return BatchResult(candidates=merged, reports=reports, failed_seeds=failures)


def write_candidates_jsonl(path: str | Path,
                           candidates: Iterable[ModerationCandidate | BatchCandidate]) -> int:
    """Export candidates as JSON-lines, one candidate per line."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for cand in candidates:
            fh.write(json.dumps(cand.to_dict(), sort_keys=True) + "\n")
            n += 1
    return n
