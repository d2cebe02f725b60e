"""Corpus persistence: images on disk, metadata in sqlite, hashes in memory.

Image bytes are content-addressed (sha256), so re-ingesting identical bytes
is idempotent and duplicate posts collapse onto one record with multiple
source references. Both hash kinds are computed at ingest time, which is
cheap and lets calibration switch families without re-reading images.

Ingest commits one transaction per manifest entry; replaying a manifest
after an interruption converges to the same final state.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import sqlite3
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import (
    AlreadyMember,
    DecodeError,
    PixelmodError,
    UnknownImage,
    ValidationError,
    VersionConflict,
)
from .hashing import HashKind, PerceptualHash, decode_image, pdqhash256, phash64
from .index import BinaryIndex
from .ocr import OcrLabel, normalize, sidecar_path

_SCHEMA = """
CREATE TABLE IF NOT EXISTS images (
    image_id    TEXT PRIMARY KEY,
    storage_path TEXT,
    phash64     TEXT NOT NULL,
    pdq256      TEXT NOT NULL,
    pdq_quality INTEGER NOT NULL DEFAULT 0,
    label_id    INTEGER,
    ingested_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS sources (
    image_id  TEXT NOT NULL,
    post_id   TEXT,
    post_text TEXT
);
CREATE TABLE IF NOT EXISTS labels (
    label_id   INTEGER PRIMARY KEY AUTOINCREMENT,
    raw        TEXT NOT NULL,
    normalized TEXT NOT NULL,
    coverage   REAL
);
CREATE TABLE IF NOT EXISTS seed_sets (
    name    TEXT PRIMARY KEY,
    version INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS seed_members (
    set_name       TEXT NOT NULL,
    image_id       TEXT NOT NULL,
    provenance     TEXT NOT NULL,
    from_candidate TEXT,
    reviewer       TEXT,
    added_at       TEXT NOT NULL,
    PRIMARY KEY (set_name, image_id)
);
CREATE TABLE IF NOT EXISTS reviews (
    review_id  INTEGER PRIMARY KEY AUTOINCREMENT,
    query_id   TEXT NOT NULL,
    image_id   TEXT NOT NULL,
    verdict    TEXT NOT NULL,
    reviewer   TEXT NOT NULL,
    note       TEXT,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS ingest_journal (
    job_id   TEXT NOT NULL,
    entry_no INTEGER NOT NULL,
    path     TEXT,
    image_id TEXT,
    status   TEXT NOT NULL,
    error    TEXT
);
"""


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    post_id: str | None = None
    post_text: str | None = None
    ocr_sidecar: str | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "ManifestEntry":
        if "path" not in doc:
            raise ValidationError("manifest entry missing 'path'")
        return cls(path=str(doc["path"]),
                   post_id=doc.get("post_id"),
                   post_text=doc.get("post_text"),
                   ocr_sidecar=doc.get("ocr_sidecar"))


def read_manifest(path: str | Path) -> Iterator[ManifestEntry]:
    """Parse a JSON-lines manifest; malformed lines abort the whole read."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"manifest line {lineno}: {exc}") from exc
            yield ManifestEntry.from_dict(doc)


@dataclass
class IngestSummary:
    ingested: int = 0
    duplicates: int = 0
    failed: int = 0
    errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"ingested": self.ingested, "duplicates": self.duplicates,
                "failed": self.failed, "errors": list(self.errors)}


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    storage_path: str | None
    phash64: PerceptualHash
    pdq256: PerceptualHash
    label: OcrLabel | None
    ingested_at: str

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "storage_path": self.storage_path,
            "phash64": self.phash64.to_hex(),
            "pdq256": self.pdq256.to_hex(),
            "pdq_quality": self.pdq256.quality,
            "label": None if self.label is None else {
                "raw": self.label.raw,
                "normalized": self.label.normalized,
                "coverage": self.label.coverage,
            },
            "ingested_at": self.ingested_at,
        }


@dataclass(frozen=True)
class SeedMember:
    image_id: str
    provenance: str  # "imported" or "promoted"
    from_candidate: str | None = None
    reviewer: str | None = None


@dataclass(frozen=True)
class SeedSet:
    name: str
    version: int
    members: tuple[SeedMember, ...]


class CorpusStore:
    """Single-directory corpus: sqlite metadata plus content-addressed files.

    One writer at a time for mutations; reads are safe concurrently. Both
    binary indexes are kept in memory and rebuilt from sqlite on open.
    """

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "images").mkdir(exist_ok=True)
        self._db = sqlite3.connect(self.root / "store.db", check_same_thread=False)
        self._db.execute("PRAGMA journal_mode=WAL")
        self._db.executescript(_SCHEMA)
        self._db.commit()
        self._write_lock = threading.RLock()
        self.indexes: dict[HashKind, BinaryIndex] = {
            HashKind.PHASH64: BinaryIndex(HashKind.PHASH64),
            HashKind.PDQ256: BinaryIndex(HashKind.PDQ256),
        }
        self._load_indexes()

    def close(self) -> None:
        self._db.close()

    def _load_indexes(self) -> None:
        rows = self._db.execute(
            "SELECT image_id, phash64, pdq256, pdq_quality FROM images").fetchall()
        for image_id, ph, pdq, quality in rows:
            self.indexes[HashKind.PHASH64].insert(
                image_id, PerceptualHash.from_hex(HashKind.PHASH64, ph))
            self.indexes[HashKind.PDQ256].insert(
                image_id, PerceptualHash.from_hex(HashKind.PDQ256, pdq,
                                                  quality=quality))

    # -- ingest ---------------------------------------------------------------

    def ingest(self, entries: Iterable[ManifestEntry],
               job_id: str = "adhoc") -> IngestSummary:
        """Decode, hash, persist and index each manifest entry.

        Failures are per-entry: the bad entry is journaled and skipped while
        the rest of the manifest proceeds.
        """
        summary = IngestSummary()
        with self._write_lock:
            for entry_no, entry in enumerate(entries):
                try:
                    status = self._ingest_one(entry)
                except (PixelmodError, OSError) as exc:
                    summary.failed += 1
                    summary.errors.append(f"{entry.path}: {exc}")
                    self._journal(job_id, entry_no, entry.path, None,
                                  "failed", str(exc))
                    continue
                if status == "duplicate":
                    summary.duplicates += 1
                else:
                    summary.ingested += 1
                self._journal(job_id, entry_no, entry.path, None, status, None)
        return summary

    def _ingest_one(self, entry: ManifestEntry) -> str:
        src = Path(entry.path)
        data = src.read_bytes()
        image_id = hashlib.sha256(data).hexdigest()
        existing = self._db.execute(
            "SELECT 1 FROM images WHERE image_id = ?", (image_id,)).fetchone()
        if existing:
            with self._db:
                self._db.execute(
                    "INSERT INTO sources (image_id, post_id, post_text) VALUES (?,?,?)",
                    (image_id, entry.post_id, entry.post_text))
            return "duplicate"

        plane = decode_image(data)
        ph, pdq = phash64(plane), pdqhash256(plane)
        suffix = ".png" if data[:8] == b"\x89PNG\r\n\x1a\n" else ".jpg"
        rel = Path("images") / image_id[:2] / (image_id + suffix)
        dest = self.root / rel
        dest.parent.mkdir(parents=True, exist_ok=True)
        if not dest.exists():
            dest.write_bytes(data)

        label = self._sidecar_label(entry, src)
        if label is not None:
            # keep the sidecar convention intact for the stored copy, so
            # provider-driven extraction works against store paths too
            stored_sidecar = sidecar_path(dest)
            if not stored_sidecar.exists():
                stored_sidecar.write_text(label.raw, encoding="utf-8")
        with self._db:
            label_id = None
            if label is not None:
                cur = self._db.execute(
                    "INSERT INTO labels (raw, normalized, coverage) VALUES (?,?,?)",
                    (label.raw, label.normalized, label.coverage))
                label_id = cur.lastrowid
            self._db.execute(
                "INSERT INTO images (image_id, storage_path, phash64, pdq256,"
                " pdq_quality, label_id, ingested_at) VALUES (?,?,?,?,?,?,?)",
                (image_id, str(rel), ph.to_hex(), pdq.to_hex(), pdq.quality,
                 label_id, _now()))
            self._db.execute(
                "INSERT INTO sources (image_id, post_id, post_text) VALUES (?,?,?)",
                (image_id, entry.post_id, entry.post_text))
        self.indexes[HashKind.PHASH64].insert(image_id, ph)
        self.indexes[HashKind.PDQ256].insert(image_id, pdq)
        return "ingested"

    @staticmethod
    def _sidecar_label(entry: ManifestEntry, src: Path) -> OcrLabel | None:
        candidate = (Path(entry.ocr_sidecar) if entry.ocr_sidecar
                     else sidecar_path(src))
        if candidate.exists():
            return OcrLabel.from_raw(candidate.read_text(encoding="utf-8"))
        return None

    def _journal(self, job_id: str, entry_no: int, path: str | None,
                 image_id: str | None, status: str | None,
                 error: str | None) -> None:
        with self._db:
            self._db.execute(
                "INSERT INTO ingest_journal (job_id, entry_no, path, image_id,"
                " status, error) VALUES (?,?,?,?,?,?)",
                (job_id, entry_no, path, image_id, status or "failed", error))

    # -- record access --------------------------------------------------------

    @property
    def image_count(self) -> int:
        (n,) = self._db.execute("SELECT COUNT(*) FROM images").fetchone()
        return n

    def has_image(self, image_id: str) -> bool:
        return self._db.execute("SELECT 1 FROM images WHERE image_id = ?",
                                (image_id,)).fetchone() is not None

    def get_record(self, image_id: str) -> ImageRecord:
        row = self._db.execute(
            "SELECT image_id, storage_path, phash64, pdq256, pdq_quality,"
            " label_id, ingested_at FROM images WHERE image_id = ?",
            (image_id,)).fetchone()
        if row is None:
            raise UnknownImage(image_id)
        label = None
        if row[5] is not None:
            lab = self._db.execute(
                "SELECT raw, normalized, coverage FROM labels WHERE label_id = ?",
                (row[5],)).fetchone()
            if lab:
                label = OcrLabel(raw=lab[0], normalized=lab[1], coverage=lab[2])
        return ImageRecord(
            image_id=row[0], storage_path=row[1],
            phash64=PerceptualHash.from_hex(HashKind.PHASH64, row[2]),
            pdq256=PerceptualHash.from_hex(HashKind.PDQ256, row[3],
                                           quality=row[4]),
            label=label, ingested_at=row[6])

    def source_refs(self, image_id: str) -> list[tuple[str | None, str | None]]:
        return self._db.execute(
            "SELECT post_id, post_text FROM sources WHERE image_id = ?",
            (image_id,)).fetchall()

    def image_payload(self, image_id: str) -> tuple[bytes, Path | None]:
        """Bytes and path of a stored image (the pipeline's image source)."""
        record = self.get_record(image_id)
        if record.storage_path is None:
            raise UnknownImage(f"{image_id} has no stored bytes")
        path = self.root / record.storage_path
        return path.read_bytes(), path

    def preload_label_cache(self, cache) -> int:
        """Seed a LabelCache with every stored label, keyed by both hash
        kinds, so pipeline runs only call the OCR provider for unlabeled
        images. Returns the number of labeled records loaded."""
        rows = self._db.execute(
            "SELECT i.phash64, i.pdq256, i.pdq_quality, l.raw, l.normalized,"
            " l.coverage FROM images i JOIN labels l ON i.label_id = l.label_id")
        n = 0
        for ph, pdq, quality, raw, norm, coverage in rows:
            label = OcrLabel(raw=raw, normalized=norm, coverage=coverage)
            cache.put(PerceptualHash.from_hex(HashKind.PHASH64, ph), label)
            cache.put(PerceptualHash.from_hex(HashKind.PDQ256, pdq,
                                              quality=quality), label)
            n += 1
        return n

    # -- calibration corpus protocol -------------------------------------------

    def image_ids(self) -> list[str]:
        return [r[0] for r in self._db.execute(
            "SELECT image_id FROM images ORDER BY image_id")]

    def hash_for(self, image_id: str, kind: HashKind) -> PerceptualHash:
        record = self.get_record(image_id)
        return record.phash64 if kind is HashKind.PHASH64 else record.pdq256

    def label_for(self, image_id: str) -> str:
        record = self.get_record(image_id)
        return record.label.normalized if record.label else ""

    # -- seed sets --------------------------------------------------------------

    def create_seed_set(self, name: str) -> SeedSet:
        if not name:
            raise ValidationError("seed set name is empty")
        with self._write_lock, self._db:
            exists = self._db.execute(
                "SELECT 1 FROM seed_sets WHERE name = ?", (name,)).fetchone()
            if exists:
                raise ValidationError(f"seed set {name!r} already exists")
            self._db.execute(
                "INSERT INTO seed_sets (name, version) VALUES (?, 0)", (name,))
        return self.get_seed_set(name)

    def get_seed_set(self, name: str) -> SeedSet:
        row = self._db.execute(
            "SELECT version FROM seed_sets WHERE name = ?", (name,)).fetchone()
        if row is None:
            raise ValidationError(f"unknown seed set {name!r}")
        members = tuple(
            SeedMember(image_id=r[0], provenance=r[1], from_candidate=r[2],
                       reviewer=r[3])
            for r in self._db.execute(
                "SELECT image_id, provenance, from_candidate, reviewer"
                " FROM seed_members WHERE set_name = ? ORDER BY image_id",
                (name,)))
        return SeedSet(name=name, version=row[0], members=members)

    def add_seed_member(self, name: str, image_id: str, provenance: str,
                        from_candidate: str | None = None,
                        reviewer: str | None = None,
                        expected_version: int | None = None) -> SeedSet:
        """Versioned compare-and-set insert of one member."""
        if provenance not in ("imported", "promoted"):
            raise ValidationError(f"bad provenance {provenance!r}")
        with self._write_lock, self._db:
            row = self._db.execute(
                "SELECT version FROM seed_sets WHERE name = ?", (name,)).fetchone()
            if row is None:
                raise ValidationError(f"unknown seed set {name!r}")
            version = row[0]
            if expected_version is not None and expected_version != version:
                raise VersionConflict(
                    f"seed set {name!r} at version {version}, "
                    f"expected {expected_version}")
            if not self.has_image(image_id):
                raise UnknownImage(image_id)
            dup = self._db.execute(
                "SELECT 1 FROM seed_members WHERE set_name = ? AND image_id = ?",
                (name, image_id)).fetchone()
            if dup:
                raise AlreadyMember(image_id)
            self._db.execute(
                "INSERT INTO seed_members (set_name, image_id, provenance,"
                " from_candidate, reviewer, added_at) VALUES (?,?,?,?,?,?)",
                (name, image_id, provenance, from_candidate, reviewer, _now()))
            self._db.execute(
                "UPDATE seed_sets SET version = version + 1 WHERE name = ?",
                (name,))
        return self.get_seed_set(name)

    def promote_to_seed(self, name: str, candidate_id: str, reviewer: str,
                        expected_version: int | None = None) -> SeedSet:
        """Move an approved candidate into the seed set."""
        if not reviewer:
            raise ValidationError("reviewer id is empty")
        return self.add_seed_member(name, candidate_id, "promoted",
                                    from_candidate=candidate_id,
                                    reviewer=reviewer,
                                    expected_version=expected_version)

    def export_seed_set(self, name: str) -> dict:
        """Portable JSON form with hashes and labels inline."""
        seed_set = self.get_seed_set(name)
        members = []
        for member in seed_set.members:
            record = self.get_record(member.image_id)
            members.append({
                "image_id": member.image_id,
                "provenance": member.provenance,
                "phash64": record.phash64.to_hex(),
                "pdq256": record.pdq256.to_hex(),
                "pdq_quality": record.pdq256.quality,
                "label": record.label.raw if record.label else None,
            })
        return {"schema_version": 1, "name": name,
                "version": seed_set.version, "members": members}

    def import_seed_set(self, doc: dict, name: str | None = None) -> SeedSet:
        """Create a seed set from an export; absent images become hash-only
        records (no stored bytes) so matching still works."""
        name = name or doc["name"]
        with self._write_lock:
            self.create_seed_set(name)
            for member in doc.get("members", []):
                image_id = member["image_id"]
                if not self.has_image(image_id):
                    self._register_hash_only(image_id, member)
                self.add_seed_member(name, image_id, "imported")
        return self.get_seed_set(name)

    def _register_hash_only(self, image_id: str, member: dict) -> None:
        ph = PerceptualHash.from_hex(HashKind.PHASH64, member["phash64"])
        pdq = PerceptualHash.from_hex(HashKind.PDQ256, member["pdq256"],
                                      quality=member.get("pdq_quality", 0))
        with self._db:
            label_id = None
            if member.get("label"):
                cur = self._db.execute(
                    "INSERT INTO labels (raw, normalized, coverage) VALUES (?,?,?)",
                    (member["label"], normalize(member["label"]), None))
                label_id = cur.lastrowid
            self._db.execute(
                "INSERT INTO images (image_id, storage_path, phash64, pdq256,"
                " pdq_quality, label_id, ingested_at) VALUES (?,?,?,?,?,?,?)",
                (image_id, None, ph.to_hex(), pdq.to_hex(), pdq.quality,
                 label_id, _now()))
        self.indexes[HashKind.PHASH64].insert(image_id, ph)
        self.indexes[HashKind.PDQ256].insert(image_id, pdq)

    def seed_images(self, name: str,
                    kind: HashKind = HashKind.PDQ256) -> list:
        """Seed-set members as pipeline query inputs.

        Members with stored bytes query by image; hash-only imported members
        query from their stored hash (of ``kind``) and label.
        """
        from .pipeline import PrehashedSeed, SeedImage

        out = []
        for member in self.get_seed_set(name).members:
            record = self.get_record(member.image_id)
            if record.storage_path is not None:
                path = self.root / record.storage_path
                out.append(SeedImage(query_id=member.image_id,
                                     data=path.read_bytes(), path=path,
                                     corpus_id=member.image_id))
            else:
                label = record.label or OcrLabel.from_raw("")
                seed_hash = (record.phash64 if kind is HashKind.PHASH64
                             else record.pdq256)
                out.append(PrehashedSeed(query_id=member.image_id,
                                         seed_hash=seed_hash, label=label,
                                         corpus_id=member.image_id))
        return out

    # -- review audit log --------------------------------------------------------

    def record_review(self, query_id: str, image_id: str, verdict: str,
                      reviewer: str, note: str | None = None) -> int:
        if verdict not in ("approve", "dismiss"):
            raise ValidationError(f"bad verdict {verdict!r}")
        if not reviewer:
            raise ValidationError("reviewer id is empty")
        with self._write_lock, self._db:
            cur = self._db.execute(
                "INSERT INTO reviews (query_id, image_id, verdict, reviewer,"
                " note, created_at) VALUES (?,?,?,?,?,?)",
                (query_id, image_id, verdict, reviewer, note, _now()))
            return int(cur.lastrowid)

    def latest_verdicts(self) -> dict[tuple[str, str], str]:
        """Latest verdict per (query_id, image_id)."""
        rows = self._db.execute(
            "SELECT query_id, image_id, verdict FROM reviews ORDER BY review_id")
        return {(q, i): v for q, i, v in rows}

    def review_history(self, query_id: str, image_id: str) -> list[dict]:
        rows = self._db.execute(
            "SELECT verdict, reviewer, note, created_at FROM reviews"
            " WHERE query_id = ? AND image_id = ? ORDER BY review_id",
            (query_id, image_id)).fetchall()
        return [{"verdict": v, "reviewer": r, "note": n, "created_at": c}
                for v, r, n, c in rows]

    # -- reconciliation ------------------------------------------------------------

    def reconcile(self) -> dict:
        """Counts that must agree after any completed ingest."""
        return {
            "store": self.image_count,
            "phash64_index": self.indexes[HashKind.PHASH64].count,
            "pdq256_index": self.indexes[HashKind.PDQ256].count,
        }
