"""In-memory binary index over perceptual hashes.

Hashes are packed into 64-bit words and scanned with vectorized popcounts.
Two strategies share one class: FLAT scans every record (exact), IVF probes
the nearest clusters of a k-majority quantizer (exact within the probed
clusters). A snapshot format with a trailing CRC makes indexes portable.

Thread contract: many concurrent readers or one writer. Searches take the
read side; insert/build_ivf take the write side.
"""

from __future__ import annotations

import enum
import struct
import threading
import zlib
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ChecksumMismatch,
    DuplicateId,
    KindMismatch,
    TooFewRecords,
    VersionMismatch,
)
from .hashing import HashKind, PerceptualHash

SNAPSHOT_MAGIC = b"PXMODIDX"
SNAPSHOT_VERSION = 1

_NO_CLUSTER = 0xFFFFFFFF


class IndexKind(enum.Enum):
    FLAT = "flat"
    IVF = "ivf"


@dataclass(frozen=True)
class IndexConfig:
    kind: IndexKind = IndexKind.FLAT
    nlist: int = 64
    nprobe: int = 4

    def __post_init__(self) -> None:
        if self.kind is IndexKind.IVF:
            if self.nlist < 1:
                raise ValueError("nlist must be >= 1")
            if not 1 <= self.nprobe <= self.nlist:
                raise ValueError("nprobe must be in [1, nlist]")


@dataclass(frozen=True)
class SearchHit:
    image_id: str
    distance: int


def _popcount_rows(words: np.ndarray) -> np.ndarray:
    """Per-row popcount of a (n, nwords) uint64 array."""
    return np.bitwise_count(words).sum(axis=1, dtype=np.int64)


def _pack_bits(bits: bytes, nwords: int) -> np.ndarray:
    return np.frombuffer(bits, dtype=">u8").astype(np.uint64).reshape(nwords)


class _RWLock:
    """Readers-writer lock; readers share, the writer excludes everyone."""

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._readers = 0
        self._writing = False

    @contextmanager
    def read(self):
        with self._cond:
            while self._writing:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if self._readers == 0:
                    self._cond.notify_all()

    @contextmanager
    def write(self):
        with self._cond:
            while self._writing or self._readers:
                self._cond.wait()
            self._writing = True
        try:
            yield
        finally:
            with self._cond:
                self._writing = False
                self._cond.notify_all()


class BinaryIndex:
    """Hamming range / top-k search over (id, hash) records of one kind."""

    def __init__(self, hash_kind: HashKind, config: IndexConfig | None = None) -> None:
        self.hash_kind = hash_kind
        self.config = config or IndexConfig()
        self._nwords = hash_kind.bit_length // 64
        self._ids: list[str] = []
        self._id_pos: dict[str, int] = {}
        self._words = np.zeros((0, self._nwords), dtype=np.uint64)
        self._size = 0
        self._centroids: np.ndarray | None = None
        self._assignments: np.ndarray | None = None
        self._members: list[np.ndarray] | None = None
        self._lock = _RWLock()

    # -- writer side --------------------------------------------------------

    def insert(self, image_id: str, phash: PerceptualHash) -> None:
        self._check_kind(phash)
        with self._lock.write():
            if image_id in self._id_pos:
                raise DuplicateId(image_id)
            row = _pack_bits(phash.bits, self._nwords)
            if self._size == len(self._words):
                grown = np.zeros((max(1024, 2 * len(self._words)), self._nwords),
                                 dtype=np.uint64)
                grown[: self._size] = self._words[: self._size]
                self._words = grown
            self._words[self._size] = row
            self._id_pos[image_id] = self._size
            self._ids.append(image_id)
            if self._centroids is not None:
                # Late insert lands in its nearest existing cluster.
                cluster = int(np.argmin(self._centroid_distances(row)))
                self._assignments = np.append(self._assignments, np.int64(cluster))
                self._members = None
            self._size += 1

    def build_ivf(self, nlist: int | None = None, max_iters: int = 25,
                  seed: int = 0) -> np.ndarray:
        """Cluster all records by k-majority; returns the centroid table.

        Assignment minimizes Hamming distance (ties to the lowest cluster
        index); the update step sets each centroid bit to the majority bit of
        its members with ties resolved to 1. Deterministic for a given seed.
        """
        nlist = self.config.nlist if nlist is None else nlist
        with self._lock.write():
            rows = self._words[: self._size]
            if self._size < nlist:
                raise TooFewRecords(f"{self._size} records < nlist={nlist}")
            centroids = self._init_centroids(rows, nlist, seed)
            assign = self._assign(rows, centroids)
            for _ in range(max_iters):
                centroids = self._majority_update(rows, assign, centroids)
                new_assign = self._assign(rows, centroids)
                if np.array_equal(new_assign, assign):
                    assign = new_assign
                    break
                assign = new_assign
            self._centroids = centroids
            self._assignments = assign
            self._members = None
            return centroids.copy()

    def _init_centroids(self, rows: np.ndarray, nlist: int, seed: int) -> np.ndarray:
        # Farthest-point seeding under Hamming distance, starting from a
        # seeded random record; ties go to the lowest record position.
        rng = np.random.default_rng(seed)
        first = int(rng.integers(len(rows)))
        chosen = [first]
        min_d = _popcount_rows(rows ^ rows[first])
        while len(chosen) < nlist:
            nxt = int(np.argmax(min_d))
            chosen.append(nxt)
            min_d = np.minimum(min_d, _popcount_rows(rows ^ rows[nxt]))
        return rows[chosen].copy()

    def _assign(self, rows: np.ndarray, centroids: np.ndarray) -> np.ndarray:
        out = np.empty(len(rows), dtype=np.int64)
        step = 65536
        for start in range(0, len(rows), step):
            chunk = rows[start:start + step]
            d = np.bitwise_count(chunk[:, None, :] ^ centroids[None, :, :]).sum(
                axis=2, dtype=np.int64)
            out[start:start + step] = np.argmin(d, axis=1)
        return out

    def _majority_update(self, rows: np.ndarray, assign: np.ndarray,
                         old: np.ndarray) -> np.ndarray:
        centroids = old.copy()
        byte_rows = rows.astype(">u8").view(np.uint8).reshape(len(rows), -1)
        for c in range(len(centroids)):
            members = byte_rows[assign == c]
            if len(members) == 0:
                continue  # empty cluster keeps its previous centroid
            ones = np.unpackbits(members, axis=1).sum(axis=0, dtype=np.int64)
            majority = (2 * ones >= len(members)).astype(np.uint8)
            packed = np.packbits(majority).tobytes()
            centroids[c] = _pack_bits(packed, self._nwords)
        return centroids

    # -- reader side --------------------------------------------------------

    @property
    def count(self) -> int:
        with self._lock.read():
            return self._size

    @property
    def centroids(self) -> np.ndarray | None:
        with self._lock.read():
            return None if self._centroids is None else self._centroids.copy()

    def contains(self, image_id: str) -> bool:
        with self._lock.read():
            return image_id in self._id_pos

    def search_range(self, query: PerceptualHash, radius: int) -> list[SearchHit]:
        """Every stored hash within ``radius`` of the query, closest first.

        FLAT scans exhaustively; IVF scans only the ``nprobe`` clusters whose
        centroids are nearest the query (exhaustive when nprobe = nlist).
        """
        self._check_kind(query)
        if not 0 <= radius <= self.hash_kind.bit_length:
            raise ValueError(f"radius must be in [0, {self.hash_kind.bit_length}]")
        q = _pack_bits(query.bits, self._nwords)
        with self._lock.read():
            candidates = self._candidate_rows(q)
            rows = self._words[: self._size] if candidates is None else self._words[candidates]
            if len(rows) == 0:
                return []
            d = _popcount_rows(rows ^ q)
            keep = np.flatnonzero(d <= radius)
            positions = keep if candidates is None else candidates[keep]
            hits = [SearchHit(self._ids[int(i)], int(dist))
                    for i, dist in zip(positions, d[keep])]
        hits.sort(key=lambda h: (h.distance, h.image_id))
        return hits

    def search_topk(self, query: PerceptualHash, k: int) -> list[SearchHit]:
        """The k nearest records (fewer if the index is smaller)."""
        self._check_kind(query)
        if k < 1:
            raise ValueError("k must be >= 1")
        q = _pack_bits(query.bits, self._nwords)
        with self._lock.read():
            candidates = self._candidate_rows(q)
            rows = self._words[: self._size] if candidates is None else self._words[candidates]
            if len(rows) == 0:
                return []
            d = _popcount_rows(rows ^ q)
            if candidates is None:
                candidates = np.arange(self._size)
            if k < len(d):
                kth = np.partition(d, k - 1)[k - 1]
                near = d <= kth  # keep boundary ties, resolved by id below
                candidates, d = candidates[near], d[near]
            hits = [SearchHit(self._ids[int(i)], int(dist))
                    for i, dist in zip(candidates, d)]
        hits.sort(key=lambda h: (h.distance, h.image_id))
        return hits[:k]

    def _candidate_rows(self, q: np.ndarray) -> np.ndarray | None:
        """Row positions to scan, or None for the whole store."""
        if (self.config.kind is IndexKind.FLAT or self._centroids is None
                or self._size == 0):
            return None
        cd = self._centroid_distances(q)
        order = np.lexsort((np.arange(len(cd)), cd))  # distance, then index
        probe = order[: self.config.nprobe]
        members = self._member_lists()
        picked = [members[int(c)] for c in probe]
        return np.concatenate(picked) if picked else np.arange(0)

    def _centroid_distances(self, q: np.ndarray) -> np.ndarray:
        assert self._centroids is not None
        return _popcount_rows(self._centroids ^ q)

    def _member_lists(self) -> list[np.ndarray]:
        if self._members is None:
            assert self._assignments is not None and self._centroids is not None
            self._members = [np.flatnonzero(self._assignments == c)
                             for c in range(len(self._centroids))]
        return self._members

    def _check_kind(self, phash: PerceptualHash) -> None:
        if phash.kind is not self.hash_kind:
            raise KindMismatch(f"index holds {self.hash_kind.name}, "
                               f"got {phash.kind.name}")

    def hash_of(self, image_id: str) -> PerceptualHash:
        with self._lock.read():
            pos = self._id_pos.get(image_id)
            if pos is None:
                raise KeyError(image_id)
            raw = self._words[pos].astype(">u8").tobytes()
        quality = 0 if self.hash_kind is HashKind.PDQ256 else None
        return PerceptualHash(self.hash_kind, raw, quality)

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Write a snapshot: header, centroids, records, trailing CRC-32."""
        with self._lock.read():
            parts = [SNAPSHOT_MAGIC]
            kind_code = 1 if self.hash_kind is HashKind.PHASH64 else 2
            index_code = 0 if self.config.kind is IndexKind.FLAT else 1
            ncent = 0 if self._centroids is None else len(self._centroids)
            parts.append(struct.pack("<HBBIIQI", SNAPSHOT_VERSION, kind_code,
                                     index_code, self.config.nlist,
                                     self.config.nprobe, self._size, ncent))
            if self._centroids is not None:
                parts.append(self._centroids.astype(">u8").tobytes())
            byte_len = self.hash_kind.byte_length
            for pos in range(self._size):
                ident = self._ids[pos].encode("utf-8")
                cluster = (_NO_CLUSTER if self._assignments is None
                           else int(self._assignments[pos]))
                parts.append(struct.pack("<H", len(ident)))
                parts.append(ident)
                parts.append(self._words[pos].astype(">u8").tobytes()[:byte_len])
                parts.append(struct.pack("<I", cluster))
            body = b"".join(parts)
        payload = body + struct.pack("<I", zlib.crc32(body))
        Path(path).write_bytes(payload)

    @classmethod
    def load(cls, path: str | Path,
             expected_kind: HashKind | None = None) -> "BinaryIndex":
        blob = Path(path).read_bytes()
        if len(blob) < len(SNAPSHOT_MAGIC) + 2 or not blob.startswith(SNAPSHOT_MAGIC):
            raise VersionMismatch("not an index snapshot")
        (version,) = struct.unpack_from("<H", blob, len(SNAPSHOT_MAGIC))
        if version != SNAPSHOT_VERSION:
            raise VersionMismatch(f"snapshot version {version}, "
                                  f"expected {SNAPSHOT_VERSION}")
        if len(blob) < 4:
            raise ChecksumMismatch("snapshot too short")
        body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
        if zlib.crc32(body) != crc:
            raise ChecksumMismatch("snapshot CRC mismatch (truncated or corrupt)")

        offset = len(SNAPSHOT_MAGIC)
        version, kind_code, index_code, nlist, nprobe, count, ncent = (
            struct.unpack_from("<HBBIIQI", body, offset))
        offset += struct.calcsize("<HBBIIQI")
        hash_kind = HashKind.PHASH64 if kind_code == 1 else HashKind.PDQ256
        if expected_kind is not None and hash_kind is not expected_kind:
            raise KindMismatch(f"snapshot holds {hash_kind.name}, "
                               f"engine expects {expected_kind.name}")
        config = (IndexConfig(IndexKind.FLAT) if index_code == 0
                  else IndexConfig(IndexKind.IVF, nlist=nlist, nprobe=nprobe))
        idx = cls(hash_kind, config)
        byte_len = hash_kind.byte_length
        nwords = idx._nwords
        if ncent:
            cent_bytes = body[offset:offset + ncent * byte_len]
            idx._centroids = np.frombuffer(cent_bytes, dtype=">u8").astype(
                np.uint64).reshape(ncent, nwords)
            offset += ncent * byte_len
        ids: list[str] = []
        words = np.zeros((count, nwords), dtype=np.uint64)
        assigns = np.zeros(count, dtype=np.int64)
        any_assign = False
        for pos in range(count):
            (id_len,) = struct.unpack_from("<H", body, offset)
            offset += 2
            ids.append(body[offset:offset + id_len].decode("utf-8"))
            offset += id_len
            words[pos] = _pack_bits(body[offset:offset + byte_len], nwords)
            offset += byte_len
            (cluster,) = struct.unpack_from("<I", body, offset)
            offset += 4
            if cluster != _NO_CLUSTER:
                assigns[pos] = cluster
                any_assign = True
        idx._ids = ids
        idx._id_pos = {ident: pos for pos, ident in enumerate(ids)}
        idx._words = words
        idx._size = count
        if any_assign and idx._centroids is not None:
            idx._assignments = assigns
        return idx
