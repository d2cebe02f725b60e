"""HTTP JSON facade over ingest, query, stories, and review actions.

Long-running work (ingest, batch query, story rebuild) runs on a
single-worker job queue and is polled via /v1/jobs/{id}; queries answer
synchronously. All mutating endpoints honor a client-supplied
Idempotency-Key header by replaying the first response. Authentication is
one static bearer token taken from PIXELMOD_TOKEN (no token configured
means an open instance, intended for tests and local use).

Error bodies are ``{"code", "message", "details"}``; unknown input fields
are rejected with code ``validation_error``.
"""

from __future__ import annotations

import base64
import os
import queue
import threading
import time
import traceback
import uuid
from dataclasses import dataclass, field
from typing import Any, Callable

from fastapi import Depends, FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from . import __version__
from .errors import (
    AlreadyMember,
    DecodeError,
    MissingImage,
    PixelmodError,
    ProviderUnavailable,
    UnknownImage,
    ValidationError,
    VersionConflict,
)
from .hashing import HashKind
from .ocr import LabelCache, OcrProvider, SidecarProvider
from .pipeline import (
    BatchCandidate,
    PipelineConfig,
    SeedImage,
    batch_query,
    query,
)
from .store import CorpusStore, ManifestEntry, read_manifest
from .stories import ClusterParams, ImageStory, cluster

DEFAULT_PAGE_SIZE = 50


# ---------------------------------------------------------------------------
# job queue


@dataclass
class Job:
    job_id: str
    kind: str
    status: str = "queued"  # queued | running | done | failed
    created_at: float = field(default_factory=time.time)
    finished_at: float | None = None
    result: dict | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {"job_id": self.job_id, "kind": self.kind, "status": self.status,
                "created_at": self.created_at, "finished_at": self.finished_at,
                "result": self.result, "error": self.error}


class JobRunner:
    """One worker thread; ingest/rebuild style jobs execute serially."""

    def __init__(self) -> None:
        self._jobs: dict[str, Job] = {}
        self._queue: queue.Queue = queue.Queue()
        self._lock = threading.Lock()
        self._worker = threading.Thread(target=self._run, daemon=True)
        self._worker.start()

    def submit(self, kind: str, fn: Callable[[Job], dict]) -> Job:
        job = Job(job_id=uuid.uuid4().hex[:12], kind=kind)
        with self._lock:
            self._jobs[job.job_id] = job
        self._queue.put((job, fn))
        return job

    def get(self, job_id: str) -> Job | None:
        with self._lock:
            return self._jobs.get(job_id)

    def stats(self) -> dict:
        with self._lock:
            by_status: dict[str, int] = {}
            for job in self._jobs.values():
                by_status[job.status] = by_status.get(job.status, 0) + 1
            return by_status

    def _run(self) -> None:
        while True:
            job, fn = self._queue.get()
            job.status = "running"
            try:
                job.result = fn(job)
                job.status = "done"
            except Exception as exc:  # noqa: BLE001 - job boundary
                job.error = f"{type(exc).__name__}: {exc}"
                job.status = "failed"
                job.result = {"traceback": traceback.format_exc(limit=4)}
            finally:
                job.finished_at = time.time()


# ---------------------------------------------------------------------------
# request models


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class IngestRequest(_Strict):
    manifest_path: str | None = None
    entries: list[dict] | None = None


class QueryRequest(_Strict):
    image_id: str | None = None
    image_b64: str | None = None
    config: dict | None = None


class BatchQueryRequest(_Strict):
    seed_set: str
    config: dict | None = None


class RebuildStoriesRequest(_Strict):
    eps: int = 90
    min_cluster_size: int = 1
    scope: str = "auto"  # auto | detected | corpus


class PromoteRequest(_Strict):
    seed_set: str
    expected_version: int | None = None


class ReviewRequest(_Strict):
    query_id: str
    image_id: str
    verdict: str  # approve | dismiss
    reviewer: str
    note: str | None = None
    promote_to_seed: PromoteRequest | None = None


# ---------------------------------------------------------------------------
# app state


@dataclass
class ServiceState:
    store: CorpusStore
    provider: OcrProvider
    cache: LabelCache
    config: PipelineConfig
    jobs: JobRunner
    batch_results: dict[str, list[BatchCandidate]] = field(default_factory=dict)
    stories: list[ImageStory] = field(default_factory=list)
    stories_eps: int | None = None
    detected_ids: set[str] = field(default_factory=set)
    query_times_ms: list[float] = field(default_factory=list)
    idempotent_replies: dict[tuple[str, str], tuple[int, dict]] = field(
        default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _error(status: int, code: str, message: str, details: Any = None) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"code": code, "message": message,
                                 "details": details})


_ERROR_MAP: list[tuple[type, int, str]] = [
    (VersionConflict, 409, "version_conflict"),
    (AlreadyMember, 409, "already_member"),
    (UnknownImage, 404, "unknown_image"),
    (MissingImage, 404, "missing_image"),
    (ProviderUnavailable, 503, "provider_unavailable"),
    (DecodeError, 400, "decode_error"),
    (ValidationError, 400, "validation_error"),
    (PixelmodError, 400, "pipeline_error"),
]


def create_app(store: CorpusStore, provider: OcrProvider | None = None,
               config: PipelineConfig | None = None,
               token: str | None = None) -> FastAPI:
    """Build the service around an opened corpus store."""
    app = FastAPI(title="pixelmod", version=__version__)
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    cache = LabelCache()
    store.preload_label_cache(cache)
    state = ServiceState(store=store,
                         provider=provider or SidecarProvider(),
                         cache=cache,
                         config=config or PipelineConfig(),
                         jobs=JobRunner())
    expected_token = token if token is not None else os.environ.get(
        "PIXELMOD_TOKEN", "")
    app.state.service = state

    # -- cross-cutting ------------------------------------------------------

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        return _error(400, "validation_error", "invalid request body",
                      details=exc.errors())

    @app.exception_handler(PixelmodError)
    async def on_domain_error(request: Request, exc: PixelmodError):
        for exc_type, status, code in _ERROR_MAP:
            if isinstance(exc, exc_type):
                return _error(status, code, str(exc))
        return _error(500, "internal", str(exc))

    async def check_auth(request: Request) -> None:
        if not expected_token:
            return
        header = request.headers.get("Authorization", "")
        if header != f"Bearer {expected_token}":
            raise _AuthFailure()

    class _AuthFailure(Exception):
        pass

    @app.exception_handler(_AuthFailure)
    async def on_auth_failure(request: Request, exc: _AuthFailure):
        return _error(401, "unauthorized", "missing or invalid bearer token")

    def idempotent(request: Request, compute: Callable[[], tuple[int, dict]]
                   ) -> tuple[int, dict]:
        key = request.headers.get("Idempotency-Key")
        if not key:
            return compute()
        cache_key = (request.url.path, key)
        with state.lock:
            prior = state.idempotent_replies.get(cache_key)
        if prior is not None:
            return prior
        result = compute()
        with state.lock:
            state.idempotent_replies[cache_key] = result
        return result

    # -- ingest + jobs -------------------------------------------------------

    @app.post("/v1/ingest", status_code=202,
              dependencies=[Depends(check_auth)])
    def post_ingest(body: IngestRequest, request: Request):
        if (body.manifest_path is None) == (body.entries is None):
            raise ValidationError("provide exactly one of manifest_path "
                                  "or entries")

        def run(job: Job) -> dict:
            if body.manifest_path:
                entries = list(read_manifest(body.manifest_path))
            else:
                entries = [ManifestEntry.from_dict(e) for e in body.entries]
            summary = store.ingest(entries, job_id=job.job_id)
            store.preload_label_cache(state.cache)
            return summary.to_dict()

        def compute() -> tuple[int, dict]:
            job = state.jobs.submit("ingest", run)
            return 202, {"job_id": job.job_id}

        status, payload = idempotent(request, compute)
        return JSONResponse(status_code=status, content=payload)

    @app.get("/v1/jobs/{job_id}", dependencies=[Depends(check_auth)])
    def get_job(job_id: str):
        job = state.jobs.get(job_id)
        if job is None:
            return _error(404, "unknown_job", f"no job {job_id}")
        return job.to_dict()

    # -- queries --------------------------------------------------------------

    def _resolve_config(overrides: dict | None) -> PipelineConfig:
        if not overrides:
            return state.config
        merged = state.config.to_dict()
        unknown = set(overrides) - set(merged)
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        merged.update(overrides)
        try:
            return PipelineConfig.from_dict(merged)
        except (ValueError, KeyError) as exc:
            raise ValidationError(f"bad config: {exc}") from exc

    @app.post("/v1/query", dependencies=[Depends(check_auth)])
    def post_query(body: QueryRequest):
        if bool(body.image_id) == bool(body.image_b64):
            raise ValidationError("provide exactly one of image_id or image_b64")
        run_config = _resolve_config(body.config)
        if body.image_id:
            data, path = store.image_payload(body.image_id)
            seed = SeedImage(query_id=body.image_id, data=data, path=path,
                             corpus_id=body.image_id)
        else:
            try:
                data = base64.b64decode(body.image_b64, validate=True)
            except Exception as exc:
                raise ValidationError(f"bad base64 image: {exc}") from exc
            seed = SeedImage(query_id=f"upload-{uuid.uuid4().hex[:8]}",
                             data=data)
        started = time.perf_counter()
        candidates, report = query(seed, run_config,
                                   store.indexes[run_config.hash_kind],
                                   state.provider, state.cache, store)
        with state.lock:
            state.query_times_ms.append((time.perf_counter() - started) * 1e3)
            state.detected_ids.update(c.image_id for c in candidates
                                      if c.decision.is_positive)
        return {"query_id": seed.query_id,
                "candidates": [c.to_dict() for c in candidates],
                "report": report.to_dict(),
                "config": run_config.to_dict()}

    @app.post("/v1/batch-query", status_code=202,
              dependencies=[Depends(check_auth)])
    def post_batch_query(body: BatchQueryRequest, request: Request):
        run_config = _resolve_config(body.config)
        store.get_seed_set(body.seed_set)  # validate early: 400 on bad name

        def run(job: Job) -> dict:
            seeds = store.seed_images(body.seed_set, run_config.hash_kind)
            result = batch_query(seeds, run_config,
                                 store.indexes[run_config.hash_kind],
                                 state.provider, state.cache, store)
            with state.lock:
                state.batch_results[job.job_id] = result.candidates
                state.detected_ids.update(c.image_id for c in result.candidates
                                          if c.decision.is_positive)
            return {
                "candidates": len(result.candidates),
                "accepted": sum(1 for c in result.candidates
                                if c.decision.is_positive),
                "failed_seeds": result.failed_seeds,
                "reports": {qid: r.to_dict()
                            for qid, r in result.reports.items()},
            }

        def compute() -> tuple[int, dict]:
            job = state.jobs.submit("batch-query", run)
            return 202, {"job_id": job.job_id}

        status, payload = idempotent(request, compute)
        return JSONResponse(status_code=status, content=payload)

    @app.get("/v1/candidates", dependencies=[Depends(check_auth)])
    def get_candidates(query: str, page: int = 1,
                       page_size: int = DEFAULT_PAGE_SIZE,
                       tier: str | None = None, story: int | None = None,
                       max_distance: int | None = None):
        if page < 1 or not 1 <= page_size <= 500:
            raise ValidationError("bad pagination parameters")
        with state.lock:
            items = state.batch_results.get(query)
        if items is None:
            return _error(404, "unknown_query", f"no batch results for {query}")
        if tier is not None:
            items = [c for c in items if c.decision.value == tier]
        if max_distance is not None:
            items = [c for c in items if c.distance <= max_distance]
        if story is not None:
            members = _story_members(story)
            items = [c for c in items if c.image_id in members]
        total = len(items)
        start = (page - 1) * page_size
        page_items = items[start:start + page_size]
        return {"items": [c.to_dict() for c in page_items], "page": page,
                "page_size": page_size, "total": total,
                "pages": max(1, -(-total // page_size))}

    def _story_members(story_id: int) -> set[str]:
        with state.lock:
            for s in state.stories:
                if s.story_id == story_id:
                    return set(s.members)
        return set()

    # -- stories ----------------------------------------------------------------

    @app.get("/v1/stories", dependencies=[Depends(check_auth)])
    def get_stories():
        with state.lock:
            return {"eps": state.stories_eps,
                    "built": state.stories_eps is not None,
                    "stories": [s.to_dict() for s in state.stories]}

    @app.post("/v1/stories/rebuild", status_code=202,
              dependencies=[Depends(check_auth)])
    def post_rebuild(body: RebuildStoriesRequest, request: Request):
        if body.scope not in ("auto", "detected", "corpus"):
            raise ValidationError("scope must be auto, detected or corpus")

        def run(job: Job) -> dict:
            with state.lock:
                detected = set(state.detected_ids)
            use_detected = (body.scope == "detected"
                            or (body.scope == "auto" and detected))
            ids = sorted(detected) if use_detected else store.image_ids()
            hashes = [(image_id, store.hash_for(image_id, HashKind.PDQ256))
                      for image_id in ids]
            built = cluster(hashes, ClusterParams(
                eps=body.eps, min_cluster_size=body.min_cluster_size))
            with state.lock:
                state.stories = built
                state.stories_eps = body.eps
            return {"stories": len(built), "images": len(hashes),
                    "scope": "detected" if use_detected else "corpus"}

        def compute() -> tuple[int, dict]:
            job = state.jobs.submit("stories-rebuild", run)
            return 202, {"job_id": job.job_id}

        status, payload = idempotent(request, compute)
        return JSONResponse(status_code=status, content=payload)

    # -- review -------------------------------------------------------------------

    @app.post("/v1/review", dependencies=[Depends(check_auth)])
    def post_review(body: ReviewRequest, request: Request):
        def compute() -> tuple[int, dict]:
            verdict = body.verdict.lower()
            review_id = store.record_review(body.query_id, body.image_id,
                                            verdict, body.reviewer, body.note)
            payload: dict = {"review_id": review_id, "verdict": verdict}
            if verdict == "approve" and body.promote_to_seed is not None:
                seed_set = store.promote_to_seed(
                    body.promote_to_seed.seed_set, body.image_id,
                    reviewer=body.reviewer,
                    expected_version=body.promote_to_seed.expected_version)
                payload["seed_set"] = seed_set.name
                payload["seed_set_version"] = seed_set.version
            return 200, payload

        status, payload = idempotent(request, compute)
        return JSONResponse(status_code=status, content=payload)

    # -- images + metrics ------------------------------------------------------------

    @app.get("/v1/images/{image_id}", dependencies=[Depends(check_auth)])
    def get_image(image_id: str):
        data, path = store.image_payload(image_id)
        media = "image/png" if data[:8] == b"\x89PNG\r\n\x1a\n" else "image/jpeg"
        return Response(content=data, media_type=media)

    @app.get("/v1/images/{image_id}/meta", dependencies=[Depends(check_auth)])
    def get_image_meta(image_id: str):
        record = store.get_record(image_id)
        doc = record.to_dict()
        doc["sources"] = [{"post_id": p, "post_text": t}
                          for p, t in store.source_refs(image_id)]
        return doc

    @app.get("/v1/metrics", dependencies=[Depends(check_auth)])
    def get_metrics():
        stats = state.cache.stats()
        with state.lock:
            times = list(state.query_times_ms)
        return {
            "ocr_cache": {"hits": stats.hits, "misses": stats.misses,
                          "hit_rate": stats.hit_rate},
            "queries": {"count": len(times),
                        "mean_ms": sum(times) / len(times) if times else 0.0},
            "jobs": state.jobs.stats(),
            "corpus": store.reconcile(),
        }

    return app
