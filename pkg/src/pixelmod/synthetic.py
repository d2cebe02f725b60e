"""Deterministic synthetic corpora with verifiable ground truth.

Two generators back the test and demo paths:

``build_planted_corpus`` writes an on-disk image corpus around a handful of
seed "memes". Per seed it plants near-duplicate variants that carry the
seed's overlay text, visual twins that carry unrelated text, and standalone
distractors. Every planted relation is checked at build time:

  * variants and twins land within PDQ distance 60 of their own seed and
    beyond 90 of every other seed;
  * distractors sit beyond PDQ distance 90 of every seed;
  * variant text scores at least 0.20 Jaccard-4 against its seed text,
    twin text below 0.04 against every seed text.

With the default retrieval configuration the expected outcome is therefore
exact: all variants accepted, all twins rejected on text, no distractors
retrieved.

``build_grid_ground_truth`` builds a hash-level corpus in which exactly one
configuration (256-bit hash, radius 90, Jaccard 4-grams, threshold 0.05)
separates relevant from irrelevant pairs perfectly:

  * "far" relevant pairs at visual distance 82..90 defeat every smaller
    radius, and their 64-bit hashes are kept far so the short-hash family
    always misses them;
  * "noisy" relevant pairs share exactly a dozen 4-grams (digit fillers
    break longer runs), putting Jaccard-4 in [0.05, 0.095) and Jaccard-5
    at 0, so only the 0.05 threshold keeps them;
  * one twin per query is a character-substitution mutant of the query
    label (every 4th character replaced by a digit): zero shared 4-grams
    yet high edit-distance/Jaro/short-gram similarity, which denies the
    other metrics any separating threshold.

All bands are asserted during generation, so a passing build is itself the
proof that the planted optimum is unique.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .calibration import GroundTruthSet, GtEntry
from .hashing import HashKind, PerceptualHash, decode_image, hamming, pdqhash256, phash64
from .ocr import normalize, sidecar_path
from .pipeline import PipelineConfig
from .textsim import MetricKind, TextMetric, similarity

SEED_TEXTS = (
    "FRAUD. THE BIGGEST DISGRACE IN OUR HISTORY",
    "STOP THE COUNT THEY ARE STEALING OUR VOTES TONIGHT",
    "DEAD PEOPLE VOTED IN SIX STATES LAST NIGHT",
    "MAIL IN BALLOTS DUMPED IN A RIVER NEAR DETROIT",
    "VOTING MACHINES FLIPPED THOUSANDS OF BALLOTS OVERNIGHT",
)

TWIN_TEXTS = (
    "FOX NEWS PROJECTS BIDEN WIN IN ARIZONA",
    "happy birthday grandma love from everyone",
    "new puppy just arrived meet rocky",
    "huge summer clearance fifty percent off",
    "concert friday doors open at seven",
    "weekly farmers market moved to sunday",
    "congrats class of twenty twenty one",
    "lost cat orange tabby reward offered",
    "yoga class schedule updated for spring",
    "fresh bagels every morning until noon",
)

_J4 = TextMetric(MetricKind.JACCARD_NGRAM, 4)


# ---------------------------------------------------------------------------
# planted image corpus


@dataclass(frozen=True)
class PlantedSeed:
    query_id: str
    path: Path
    sha256: str
    text: str


@dataclass(frozen=True)
class PlantedImage:
    path: Path
    sha256: str
    role: str  # "variant" | "twin" | "distractor"
    seed_index: int | None


@dataclass
class PlantedCorpus:
    root: Path
    seeds: list[PlantedSeed]
    images: list[PlantedImage]
    manifest_path: Path

    def ids_for_role(self, role: str) -> set[str]:
        return {img.sha256 for img in self.images if img.role == role}

    @property
    def variant_ids(self) -> set[str]:
        return self.ids_for_role("variant")

    @property
    def twin_ids(self) -> set[str]:
        return self.ids_for_role("twin")

    @property
    def distractor_ids(self) -> set[str]:
        return self.ids_for_role("distractor")


def _seed_image(rng: np.random.Generator, idx: int) -> np.ndarray:
    h, w = 160, 200
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = 120 + 60 * np.sin(xx / rng.uniform(9, 26)) \
        + 55 * np.cos(yy / rng.uniform(8, 22) + idx)
    for _ in range(4):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        s = rng.uniform(10, 34)
        base += rng.uniform(-70, 70) * np.exp(
            -(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s)))
    band = slice(int(h * 0.72), int(h * 0.92))
    base[band, :] = 18.0
    for x in range(10, w - 10, 14):
        if rng.random() < 0.75:
            base[band, x:x + 9] = 235.0
    rgb = np.stack([base, np.roll(base, 3 + idx, axis=1), base[::-1]], axis=-1)
    rgb += rng.normal(0, 3, rgb.shape)
    return rgb.clip(0, 255).astype(np.uint8)


def _distractor_image(rng: np.random.Generator) -> np.ndarray:
    h, w = 160, 200
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    style = rng.integers(0, 3)
    if style == 0:
        base = 128 + 90 * np.sin(xx / rng.uniform(5, 40) + rng.uniform(0, 6)) \
            * np.cos(yy / rng.uniform(5, 40))
    elif style == 1:
        base = (np.floor(xx / rng.integers(8, 30))
                + np.floor(yy / rng.integers(8, 30))) % 2 * 180 + 40
    else:
        base = np.full((h, w), 60.0)
        for _ in range(8):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            s = rng.uniform(6, 30)
            base += rng.uniform(20, 90) * np.exp(
                -(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s)))
    rgb = np.stack([base, np.roll(base, 5, axis=0), 255 - base], axis=-1)
    rgb += rng.normal(0, 4, rgb.shape)
    return rgb.clip(0, 255).astype(np.uint8)


def _perturb(rng: np.random.Generator, arr: np.ndarray) -> bytes:
    """Mild photometric edit plus optional JPEG pass; returns PNG bytes."""
    out = arr.astype(np.float64)
    out = out + rng.normal(0, rng.uniform(1.5, 3.5), out.shape)
    out = out * rng.uniform(0.97, 1.03) + rng.uniform(-6, 6)
    result = out.clip(0, 255).astype(np.uint8)
    if rng.random() < 0.5:
        buf = io.BytesIO()
        Image.fromarray(result).save(buf, format="JPEG",
                                     quality=int(rng.integers(82, 93)))
        result = np.asarray(Image.open(buf).convert("RGB"))
    png = io.BytesIO()
    Image.fromarray(result).save(png, format="PNG")
    return png.getvalue()


def _png_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def _variant_text(rng: np.random.Generator, text: str) -> str:
    roll = rng.random()
    if roll < 0.3:
        return text
    if roll < 0.55:
        return text.lower()
    if roll < 0.8:
        words = text.split()
        cut = len(words) // 2
        return " ".join(words[cut:]) + "\n" + " ".join(words[:cut])
    return "  " + text.replace(" ", "   ") + " "


def build_planted_corpus(root: str | Path, seed: int = 0,
                         n_variants: int = 40, n_twins: int = 10,
                         n_distractors: int = 150) -> PlantedCorpus:
    """Write the planted corpus to ``root`` and return its bookkeeping."""
    rng = np.random.default_rng(seed)
    root = Path(root)
    seeds_dir = root / "seeds"
    images_dir = root / "images"
    seeds_dir.mkdir(parents=True, exist_ok=True)
    images_dir.mkdir(parents=True, exist_ok=True)

    for text in TWIN_TEXTS:
        for seed_text in SEED_TEXTS:
            overlap = similarity(_J4, normalize(text), normalize(seed_text))
            assert overlap < 0.04, f"twin text too close to a seed text: {overlap}"

    seed_arrays: list[np.ndarray] = []
    seed_hashes: list[PerceptualHash] = []
    seeds: list[PlantedSeed] = []
    for idx, text in enumerate(SEED_TEXTS):
        while True:
            arr = _seed_image(rng, idx)
            data = _png_bytes(arr)
            h = pdqhash256(decode_image(data))
            if all(hamming(h, other) > 120 for other in seed_hashes):
                break
        path = seeds_dir / f"seed-{idx}.png"
        path.write_bytes(data)
        sidecar_path(path).write_text(text, encoding="utf-8")
        seed_arrays.append(arr)
        seed_hashes.append(h)
        seeds.append(PlantedSeed(query_id=f"seed-{idx}", path=path,
                                 sha256=hashlib.sha256(data).hexdigest(),
                                 text=text))

    images: list[PlantedImage] = []
    taken_hashes = {h.bits for h in seed_hashes}

    def plant_near(seed_idx: int, name: str, text: str, role: str) -> None:
        # Distinct hash per planted image keeps OCR-call accounting exact.
        while True:
            data = _perturb(rng, seed_arrays[seed_idx])
            h = pdqhash256(decode_image(data))
            own = hamming(h, seed_hashes[seed_idx])
            others = [hamming(h, seed_hashes[j])
                      for j in range(len(seed_hashes)) if j != seed_idx]
            if 1 <= own <= 60 and all(d > 90 for d in others) \
                    and h.bits not in taken_hashes:
                break
        taken_hashes.add(h.bits)
        path = images_dir / name
        path.write_bytes(data)
        sidecar_path(path).write_text(text, encoding="utf-8")
        images.append(PlantedImage(path=path,
                                   sha256=hashlib.sha256(data).hexdigest(),
                                   role=role, seed_index=seed_idx))

    for i in range(n_variants):
        seed_idx = i % len(seeds)
        text = _variant_text(rng, SEED_TEXTS[seed_idx])
        assert similarity(_J4, normalize(text),
                          normalize(SEED_TEXTS[seed_idx])) >= 0.20
        plant_near(seed_idx, f"variant-{i:03d}.png", text, "variant")

    for i in range(n_twins):
        seed_idx = i % len(seeds)
        plant_near(seed_idx, f"twin-{i:03d}.png",
                   TWIN_TEXTS[i % len(TWIN_TEXTS)], "twin")

    for i in range(n_distractors):
        while True:
            data = _png_bytes(_distractor_image(rng))
            h = pdqhash256(decode_image(data))
            if all(hamming(h, s) > 90 for s in seed_hashes) \
                    and h.bits not in taken_hashes:
                break
        taken_hashes.add(h.bits)
        path = images_dir / f"distractor-{i:03d}.png"
        path.write_bytes(data)
        if rng.random() < 0.33:
            sidecar_path(path).write_text(
                TWIN_TEXTS[int(rng.integers(len(TWIN_TEXTS)))], encoding="utf-8")
        images.append(PlantedImage(path=path,
                                   sha256=hashlib.sha256(data).hexdigest(),
                                   role="distractor", seed_index=None))

    manifest_path = root / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for pos, img in enumerate(images):
            fh.write(json.dumps({"path": str(img.path),
                                 "post_id": f"post-{pos:04d}"}) + "\n")

    roles_path = root / "planted_roles.json"
    roles_path.write_text(json.dumps({
        "seeds": [{"query_id": s.query_id, "path": str(s.path),
                   "sha256": s.sha256, "text": s.text} for s in seeds],
        "images": [{"path": str(i.path), "sha256": i.sha256, "role": i.role,
                    "seed_index": i.seed_index} for i in images],
    }, indent=2))
    return PlantedCorpus(root=root, seeds=seeds, images=images,
                         manifest_path=manifest_path)


# ---------------------------------------------------------------------------
# hash-level grid-search ground truth


class SyntheticCalibrationCorpus:
    """In-memory corpus of precomputed hashes and normalized labels."""

    def __init__(self) -> None:
        self._hashes: dict[str, dict[HashKind, PerceptualHash]] = {}
        self._labels: dict[str, str] = {}

    def add(self, image_id: str, pdq: PerceptualHash, ph: PerceptualHash,
            label: str) -> None:
        self._hashes[image_id] = {HashKind.PDQ256: pdq, HashKind.PHASH64: ph}
        self._labels[image_id] = normalize(label)

    def image_ids(self) -> list[str]:
        return sorted(self._hashes)

    def hash_for(self, image_id: str, kind: HashKind) -> PerceptualHash:
        return self._hashes[image_id][kind]

    def label_for(self, image_id: str) -> str:
        return self._labels[image_id]


def _flip(raw: bytes, rng: np.random.Generator, n_bits: int) -> bytes:
    width = len(raw) * 8
    value = int.from_bytes(raw, "big")
    for p in rng.choice(width, size=n_bits, replace=False):
        value ^= 1 << int(p)
    return value.to_bytes(len(raw), "big")


def _pdq(raw: bytes) -> PerceptualHash:
    return PerceptualHash(HashKind.PDQ256, raw, quality=50)


def _ph(raw: bytes) -> PerceptualHash:
    return PerceptualHash(HashKind.PHASH64, raw)


_QUERY_LABEL_WORDS = (
    "ballots counted overnight while observers were kept outside the hall",
    "officials confirmed the totals match the certified canvass records",
    "volunteers delivered sealed envelopes to the county clerk on monday",
    "the recount team published every tally sheet for public inspection",
    "poll workers followed the bipartisan checklist at every single table",
    "signature verification slowed the line but every envelope was checked",
)


def _noisy_label(rng: np.random.Generator, label: str) -> str:
    """Share exactly a contiguous run's twelve 4-grams, nothing longer.

    Tokens are overlapping 4-char windows of one run inside ``label``;
    digit fillers separate them so no shared 5-gram can form.
    """
    run_start = int(rng.integers(0, len(label) - 16))
    tokens = [label[run_start + k: run_start + k + 4] for k in range(12)]
    digits = "0123456789"
    parts = []
    for pos, token in enumerate(tokens):
        filler = "".join(digits[int(d) % 10]
                         for d in rng.integers(0, 10, size=3))
        parts.append(filler + token)
    parts.append("".join(digits[int(d) % 10] for d in rng.integers(0, 10, size=3)))
    return "".join(parts)


def _mutant_label(label: str) -> str:
    """Replace every 4th character with a digit: no 4-gram survives, while
    per-character similarity stays high."""
    digits = "0123456789"
    out = list(label)
    for pos in range(0, len(out), 4):
        out[pos] = digits[pos // 4 % 10]
    return "".join(out)


def build_grid_ground_truth(seed: int = 0) -> tuple[SyntheticCalibrationCorpus,
                                                    GroundTruthSet,
                                                    PipelineConfig]:
    """Corpus + ground truth where one configuration is optimal by design."""
    rng = np.random.default_rng(seed)
    corpus = SyntheticCalibrationCorpus()
    entries: list[GtEntry] = []
    target = PipelineConfig(hash_kind=HashKind.PDQ256, theta_visual=90,
                            text_metric=_J4, theta_textual=0.05)

    metrics_to_defeat = [
        TextMetric(MetricKind.NORM_LEVENSHTEIN),
        TextMetric(MetricKind.JARO_WINKLER),
        TextMetric(MetricKind.JACCARD_NGRAM, 1),
        TextMetric(MetricKind.JACCARD_NGRAM, 2),
        TextMetric(MetricKind.JACCARD_NGRAM, 3),
    ]

    for qn, label in enumerate(_QUERY_LABEL_WORDS):
        query_id = f"q{qn}"
        label = normalize(label)
        anchor_pdq = rng.bytes(32)
        anchor_ph = rng.bytes(8)
        corpus.add(query_id, _pdq(anchor_pdq), _ph(anchor_ph), label)

        relevant_labels: list[str] = []
        twin_labels: list[str] = []

        def add_candidate(name: str, pdq_bits: int, ph_bits: int,
                          text: str, relevant: bool) -> None:
            cid = f"{query_id}-{name}"
            corpus.add(cid, _pdq(_flip(anchor_pdq, rng, pdq_bits)),
                       _ph(_flip(anchor_ph, rng, ph_bits)), text)
            entries.append(GtEntry(query_id, cid, relevant))
            (relevant_labels if relevant else twin_labels).append(
                normalize(text))

        for k in range(4):
            add_candidate(f"exact{k}", int(rng.integers(5, 31)),
                          int(rng.integers(0, 4)), label, True)
        for k in range(3):
            add_candidate(f"far{k}", int(rng.integers(82, 91)),
                          int(rng.integers(16, 33)), label, True)
        for k in range(2):
            add_candidate(f"noisy{k}", int(rng.integers(40, 61)),
                          int(rng.integers(16, 33)),
                          _noisy_label(rng, label), True)

        add_candidate("twin-mutant", int(rng.integers(40, 89)),
                      int(rng.integers(2, 9)), _mutant_label(label), False)
        add_candidate("twin-a", int(rng.integers(40, 89)),
                      int(rng.integers(2, 9)),
                      TWIN_TEXTS[qn % len(TWIN_TEXTS)], False)
        add_candidate("twin-b", int(rng.integers(40, 89)),
                      int(rng.integers(16, 33)),
                      TWIN_TEXTS[(qn + 3) % len(TWIN_TEXTS)], False)

        # The planted bands that make the target cell uniquely perfect:
        j4_rel = [similarity(_J4, label, r) for r in relevant_labels]
        j4_twin = [similarity(_J4, label, t) for t in twin_labels]
        assert min(j4_rel) >= 0.05, f"{query_id}: relevant Jaccard-4 {min(j4_rel)}"
        assert max(t for t in j4_rel if t < 1.0) < 0.095, query_id
        assert max(j4_twin) < 0.045, f"{query_id}: twin Jaccard-4 {max(j4_twin)}"

        j5 = TextMetric(MetricKind.JACCARD_NGRAM, 5)
        noisy_j5 = [similarity(j5, label, r) for r in relevant_labels if
                    similarity(_J4, label, r) < 1.0]
        assert max(noisy_j5) < 0.05, f"{query_id}: noisy Jaccard-5 {max(noisy_j5)}"

        for metric in metrics_to_defeat:
            rel_min = min(similarity(metric, label, r) for r in relevant_labels)
            twin_max = max(similarity(metric, label, t) for t in twin_labels)
            assert twin_max > rel_min + 0.01, (
                f"{query_id}: {metric} separable (rel_min={rel_min:.3f}, "
                f"twin_max={twin_max:.3f})")

    gt = GroundTruthSet(entries, note=f"synthetic grid ground truth seed={seed}")
    return corpus, gt, target
