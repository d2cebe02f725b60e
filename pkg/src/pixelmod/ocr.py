"""Overlay-text extraction behind a pluggable provider interface.

Three providers ship in-tree:

* ``SidecarProvider`` reads ``<image>.ocr.txt`` next to the image file.
  Deterministic; the one every test relies on.
* ``ExternalProcessProvider`` shells out to a locally installed OCR binary
  that prints UTF-8 text on stdout (nonzero exit means unavailable).
* ``HttpProvider`` posts base64 image bytes to a remote engine and expects
  ``{"text": ..., "boxes": [{"x", "y", "w", "h"}, ...]}`` with box
  coordinates as fractions of the image dimensions.

Labels are cached by hash so one image is never extracted twice; concurrent
misses for the same hash coalesce into a single provider call.
"""

from __future__ import annotations

import base64
import io
import os
import re
import subprocess
import tempfile
import threading
import time
import unicodedata
from dataclasses import dataclass
from pathlib import Path

from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, ProviderUnavailable
from .hashing import HashKind, PerceptualHash

DEFAULT_INFLIGHT_LIMIT = 4

_WHITESPACE_RUN = re.compile(r"\s+")


def normalize(raw: str) -> str:
    """Canonical label text: NFC, lowercased, whitespace collapsed, trimmed.

    No characters are removed beyond whitespace folding, so accents and
    punctuation survive.
    """
    return _WHITESPACE_RUN.sub(" ", unicodedata.normalize("NFC", raw).lower()).strip()


@dataclass(frozen=True)
class OcrLabel:
    raw: str
    normalized: str
    coverage: float | None = None  # fraction of image area under text boxes

    def __post_init__(self) -> None:
        if self.coverage is not None and not 0.0 <= self.coverage <= 1.0:
            raise ValueError("coverage must be in [0, 1]")

    @classmethod
    def from_raw(cls, raw: str, coverage: float | None = None) -> "OcrLabel":
        return cls(raw=raw, normalized=normalize(raw), coverage=coverage)

    @property
    def is_empty(self) -> bool:
        return not self.normalized


@dataclass(frozen=True)
class TextBox:
    """Text region as fractions of image width/height."""

    x: float
    y: float
    w: float
    h: float


@dataclass(frozen=True)
class RawExtraction:
    text: str
    boxes: tuple[TextBox, ...] = ()


@dataclass(frozen=True)
class ProviderCapabilities:
    name: str
    deterministic: bool
    reports_coverage: bool


class OcrProvider:
    """Extraction backend. Subclasses implement ``_extract``."""

    capabilities: ProviderCapabilities

    def __init__(self) -> None:
        self._calls = 0
        self._calls_lock = threading.Lock()

    @property
    def calls(self) -> int:
        with self._calls_lock:
            return self._calls

    def extract(self, image: bytes, path: str | Path | None = None) -> RawExtraction:
        with self._calls_lock:
            self._calls += 1
        return self._extract(image, Path(path) if path is not None else None)

    def _extract(self, image: bytes, path: Path | None) -> RawExtraction:
        raise NotImplementedError


class SidecarProvider(OcrProvider):
    """Reads ground-truth text from ``<image>.ocr.txt``; missing file = no text."""

    capabilities = ProviderCapabilities("sidecar", deterministic=True,
                                        reports_coverage=False)

    def _extract(self, image: bytes, path: Path | None) -> RawExtraction:
        if path is None:
            return RawExtraction("")
        sidecar = sidecar_path(path)
        if not sidecar.exists():
            return RawExtraction("")
        return RawExtraction(sidecar.read_text(encoding="utf-8"))


def sidecar_path(image_path: str | Path) -> Path:
    p = Path(image_path)
    return p.with_name(p.name + ".ocr.txt")


class ExternalProcessProvider(OcrProvider):
    """Runs ``command... <imagefile>``; stdout is the extracted text."""

    capabilities = ProviderCapabilities("external-process", deterministic=True,
                                        reports_coverage=False)

    def __init__(self, command: list[str], timeout: float = 30.0) -> None:
        super().__init__()
        self.command = list(command)
        self.timeout = timeout

    def _extract(self, image: bytes, path: Path | None) -> RawExtraction:
        tmp = None
        if path is None or not path.exists():
            fd, name = tempfile.mkstemp(suffix=".img")
            os.write(fd, image)
            os.close(fd)
            tmp = Path(name)
            path = tmp
        try:
            proc = subprocess.run(self.command + [str(path)],
                                  capture_output=True, timeout=self.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ProviderUnavailable(f"ocr process failed: {exc}") from exc
        finally:
            if tmp is not None:
                tmp.unlink(missing_ok=True)
        if proc.returncode != 0:
            raise ProviderUnavailable(
                f"ocr process exited {proc.returncode}: {proc.stderr[:200]!r}")
        return RawExtraction(proc.stdout.decode("utf-8", errors="replace"))


class HttpProvider(OcrProvider):
    """POSTs base64 image bytes to a remote OCR endpoint.

    Endpoint and key default to the PIXELMOD_OCR_URL / PIXELMOD_OCR_KEY
    environment variables; retries are bounded and only transient failures
    are retried.
    """

    capabilities = ProviderCapabilities("http", deterministic=False,
                                        reports_coverage=True)

    def __init__(self, url: str | None = None, api_key: str | None = None,
                 timeout: float = 10.0, max_retries: int = 2) -> None:
        super().__init__()
        self.url = url or os.environ.get("PIXELMOD_OCR_URL", "")
        self.api_key = api_key or os.environ.get("PIXELMOD_OCR_KEY", "")
        self.timeout = timeout
        self.max_retries = max_retries
        if not self.url:
            raise ValueError("no OCR endpoint configured (PIXELMOD_OCR_URL)")

    def _extract(self, image: bytes, path: Path | None) -> RawExtraction:
        import requests

        payload = {"image": base64.b64encode(image).decode("ascii")}
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = requests.post(self.url, json=payload, headers=headers,
                                     timeout=self.timeout)
            except requests.RequestException as exc:
                last_exc = exc
                time.sleep(min(0.2 * (attempt + 1), 1.0))
                continue
            if resp.status_code >= 500:
                last_exc = ProviderUnavailable(f"engine returned {resp.status_code}")
                time.sleep(min(0.2 * (attempt + 1), 1.0))
                continue
            if resp.status_code != 200:
                raise ProviderUnavailable(f"engine returned {resp.status_code}")
            doc = resp.json()
            boxes = tuple(TextBox(b["x"], b["y"], b["w"], b["h"])
                          for b in doc.get("boxes", []))
            return RawExtraction(str(doc.get("text", "")), boxes)
        raise ProviderUnavailable(f"ocr endpoint unreachable: {last_exc}")


def extract_label(image: bytes, provider: OcrProvider,
                  path: str | Path | None = None) -> OcrLabel:
    """Extract and normalize the overlay text of one image.

    Empty text is a valid outcome meaning the image carries no overlay text.
    Coverage is the summed fractional area of reported boxes (clamped to 1);
    providers without boxes yield no coverage.
    """
    try:
        with Image.open(io.BytesIO(image)) as img:
            _ = img.size  # header parse is enough to reject malformed bytes
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"cannot decode image for OCR: {exc}") from exc
    result = provider.extract(image, path)
    coverage = None
    if result.boxes:
        coverage = min(1.0, sum(b.w * b.h for b in result.boxes))
    return OcrLabel.from_raw(result.text, coverage)


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


class LabelCache:
    """Hash-keyed label cache, safe for concurrent use.

    A per-hash single-flight guard coalesces duplicate concurrent misses,
    and a semaphore bounds how many provider calls run at once.
    """

    def __init__(self, max_inflight: int = DEFAULT_INFLIGHT_LIMIT) -> None:
        self._labels: dict[tuple[HashKind, bytes], OcrLabel] = {}
        self._inflight: dict[tuple[HashKind, bytes], threading.Event] = {}
        self._lock = threading.Lock()
        self._gate = threading.Semaphore(max_inflight)
        self._stats = CacheStats()

    def get_or_extract(self, phash: PerceptualHash, image: bytes,
                       provider: OcrProvider,
                       path: str | Path | None = None) -> tuple[OcrLabel, bool]:
        """Return (label, was_hit); at most one provider call per unique hash."""
        key = (phash.kind, phash.bits)
        while True:
            with self._lock:
                cached = self._labels.get(key)
                if cached is not None:
                    self._stats.hits += 1
                    return cached, True
                pending = self._inflight.get(key)
                if pending is None:
                    pending = threading.Event()
                    self._inflight[key] = pending
                    break
            pending.wait()
        try:
            with self._gate:
                label = extract_label(image, provider, path)
            with self._lock:
                self._labels[key] = label
                self._stats.misses += 1
            return label, False
        finally:
            with self._lock:
                self._inflight.pop(key, None)
            pending.set()

    def peek(self, phash: PerceptualHash) -> OcrLabel | None:
        with self._lock:
            return self._labels.get((phash.kind, phash.bits))

    def put(self, phash: PerceptualHash, label: OcrLabel) -> None:
        """Pre-seed the cache (ingest-time labels, imports)."""
        with self._lock:
            self._labels.setdefault((phash.kind, phash.bits), label)

    def stats(self) -> CacheStats:
        with self._lock:
            return CacheStats(self._stats.hits, self._stats.misses)

    def __len__(self) -> int:
        with self._lock:
            return len(self._labels)
