import io
import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from pixelmod.errors import PixelmodError, ProviderUnavailable
from pixelmod.hashing import HashKind, decode_image, pdqhash256
from pixelmod.index import BinaryIndex
from pixelmod.ocr import (
    LabelCache,
    OcrProvider,
    ProviderCapabilities,
    RawExtraction,
    SidecarProvider,
    sidecar_path,
)
from pixelmod.pipeline import (
    Decision,
    EmptyQueryPolicy,
    PipelineConfig,
    SeedImage,
    batch_query,
    query,
    write_candidates_jsonl,
)
from pixelmod.textsim import MetricKind, TextMetric

from conftest import png_bytes, textured_rgb
from oracles import jaccard_sets


class DiskImages:
    """Maps ids to (bytes, path) for the pipeline's image source protocol."""

    def __init__(self):
        self.entries: dict[str, tuple[bytes, Path]] = {}

    def add(self, image_id: str, data: bytes, path: Path):
        self.entries[image_id] = (data, path)

    def image_payload(self, image_id: str):
        return self.entries[image_id]


def reencode_jpeg(data: bytes, quality: int = 88) -> bytes:
    img = Image.open(io.BytesIO(data)).convert("RGB")
    buf = io.BytesIO()
    img.save(buf, format="JPEG", quality=quality)
    return buf.getvalue()


class Corpus:
    def __init__(self, tmp_path: Path):
        self.tmp_path = tmp_path
        self.index = BinaryIndex(HashKind.PDQ256)
        self.images = DiskImages()
        self.cache = LabelCache()
        self.provider = SidecarProvider()

    def add(self, image_id: str, data: bytes, text: str | None):
        path = self.tmp_path / f"{image_id}.png"
        path.write_bytes(data)
        if text is not None:
            sidecar_path(path).write_text(text, encoding="utf-8")
        self.index.insert(image_id, pdqhash256(decode_image(data)))
        self.images.add(image_id, data, path)

    def run(self, seed: SeedImage, config: PipelineConfig | None = None):
        return query(seed, config or PipelineConfig(), self.index,
                     self.provider, self.cache, self.images)


def make_seed(tmp_path: Path, data: bytes, text: str | None,
              query_id: str = "seed") -> SeedImage:
    path = tmp_path / f"{query_id}.png"
    path.write_bytes(data)
    if text is not None:
        sidecar_path(path).write_text(text, encoding="utf-8")
    return SeedImage(query_id=query_id, data=data, path=path)


SEED_TEXT = "FRAUD. THE BIGGEST DISGRACE"
TWIN_TEXT = "FOX NEWS PROJECTS BIDEN WIN"


class TestQuery:
    def test_contextual_mismatch_fixture(self, tmp_path):
        # Visually identical corpus images split by their overlay text:
        # same-text copies are accepted, the different-context twin is not.
        corpus = Corpus(tmp_path)
        base = png_bytes(textured_rgb(300, 120, 160))
        corpus.add("a-identical", base, SEED_TEXT)
        corpus.add("b-reencoded", reencode_jpeg(base), SEED_TEXT.lower())
        corpus.add("c-twin", reencode_jpeg(base, quality=92), TWIN_TEXT)

        # independent oracle confirms the twin text is below the threshold
        assert jaccard_sets(SEED_TEXT.lower(), TWIN_TEXT.lower(), 4) < 0.05

        seed = make_seed(tmp_path, base, SEED_TEXT)
        candidates, report = corpus.run(seed)
        decisions = {c.image_id: c.decision for c in candidates}
        assert decisions == {
            "a-identical": Decision.ACCEPTED,
            "b-reencoded": Decision.ACCEPTED,
            "c-twin": Decision.REJECTED_TEXT,
        }
        assert report.visual_match_count == 3
        assert report.accepted_count == 2
        assert report.rejected_count == 1
        twin = next(c for c in candidates if c.image_id == "c-twin")
        assert twin.text_similarity < 0.05

    def test_no_visual_matches(self, tmp_path):
        corpus = Corpus(tmp_path)
        corpus.add("far", png_bytes(textured_rgb(301, 120, 160)), "whatever")
        seed = make_seed(tmp_path, png_bytes(textured_rgb(999, 120, 160)),
                         SEED_TEXT)
        candidates, report = corpus.run(seed)
        assert candidates == []
        assert report.visual_match_count == 0
        assert report.ocr_calls_made <= 1

    def test_empty_seed_label_accept_visual_only(self, tmp_path):
        corpus = Corpus(tmp_path)
        base = png_bytes(textured_rgb(302, 120, 160))
        corpus.add("m1", base, "some overlay text")
        corpus.add("m2", reencode_jpeg(base), None)
        seed = make_seed(tmp_path, base, None)  # no sidecar: empty label
        candidates, report = corpus.run(seed)
        assert {c.decision for c in candidates} == {Decision.ACCEPTED_VISUAL_ONLY}
        assert report.visual_only_count == 2
        assert report.ocr_calls_made == 1  # the seed only; matches untouched

    def test_empty_seed_label_reject_all(self, tmp_path):
        corpus = Corpus(tmp_path)
        base = png_bytes(textured_rgb(303, 120, 160))
        corpus.add("m1", base, "text")
        seed = make_seed(tmp_path, base, None)
        config = PipelineConfig(empty_query_policy=EmptyQueryPolicy.REJECT_ALL)
        candidates, report = corpus.run(seed, config)
        assert [c.decision for c in candidates] == [Decision.REJECTED_TEXT]
        assert report.rejected_count == 1

    def test_seed_corpus_id_excluded(self, tmp_path):
        corpus = Corpus(tmp_path)
        base = png_bytes(textured_rgb(304, 120, 160))
        corpus.add("self", base, SEED_TEXT)
        corpus.add("dupe", reencode_jpeg(base), SEED_TEXT)
        seed = SeedImage(query_id="q", data=base,
                         path=tmp_path / "self.png", corpus_id="self")
        candidates, _ = corpus.run(seed)
        assert [c.image_id for c in candidates] == ["dupe"]

    def test_ocr_thrift_counts(self, tmp_path):
        corpus = Corpus(tmp_path)
        base = png_bytes(textured_rgb(305, 120, 160))
        for i in range(4):
            corpus.add(f"m{i}", reencode_jpeg(base, quality=95 - i), SEED_TEXT)
        seed = make_seed(tmp_path, base, SEED_TEXT)
        _, report = corpus.run(seed)
        # one seed extraction plus one per unique uncached match
        assert report.ocr_calls_made == 1 + 4
        assert corpus.provider.calls == 5
        # run again: everything cached now
        _, report2 = corpus.run(make_seed(tmp_path, base, SEED_TEXT, "seed2"))
        assert report2.ocr_calls_made == 0
        assert corpus.provider.calls == 5

    def test_visual_radius_monotonicity(self, tmp_path):
        corpus = Corpus(tmp_path)
        base = png_bytes(textured_rgb(306, 120, 160))
        for i in range(5):
            corpus.add(f"m{i}", reencode_jpeg(base, quality=96 - 6 * i), SEED_TEXT)
        seed = make_seed(tmp_path, base, SEED_TEXT)
        sizes = []
        for radius in (0, 8, 31, 90, 140):
            config = PipelineConfig(theta_visual=radius)
            _, report = corpus.run(seed, config)
            sizes.append(report.visual_match_count)
        assert sizes == sorted(sizes)

    def test_textual_threshold_monotonicity(self, tmp_path):
        corpus = Corpus(tmp_path)
        base = png_bytes(textured_rgb(307, 120, 160))
        texts = [SEED_TEXT, SEED_TEXT + " EXTRA WORDS HERE",
                 "completely different overlay", TWIN_TEXT]
        for i, text in enumerate(texts):
            corpus.add(f"m{i}", reencode_jpeg(base, quality=96 - 3 * i), text)
        seed = make_seed(tmp_path, base, SEED_TEXT)
        accepted_sizes = []
        for theta in (0.0, 0.05, 0.3, 0.8, 1.0):
            config = PipelineConfig(theta_textual=theta)
            _, report = corpus.run(seed, config)
            accepted_sizes.append(report.accepted_count)
        assert accepted_sizes == sorted(accepted_sizes, reverse=True)

    def test_ocr_failure_marks_candidate_errored(self, tmp_path):
        class FlakyProvider(OcrProvider):
            capabilities = ProviderCapabilities("flaky", True, False)

            def __init__(self, poison_path: Path):
                super().__init__()
                self.poison = poison_path

            def _extract(self, image, path):
                if path == self.poison:
                    raise ProviderUnavailable("engine offline for this one")
                return RawExtraction(SEED_TEXT)

        corpus = Corpus(tmp_path)
        base = png_bytes(textured_rgb(308, 120, 160))
        corpus.add("ok", base, None)
        corpus.add("bad", reencode_jpeg(base), None)
        corpus.provider = FlakyProvider(tmp_path / "bad.png")
        seed = make_seed(tmp_path, base, SEED_TEXT)
        candidates, report = corpus.run(seed)
        by_id = {c.image_id: c for c in candidates}
        assert by_id["ok"].decision is Decision.ACCEPTED
        assert by_id["bad"].decision is Decision.ERRORED
        assert by_id["bad"].text_similarity is None
        assert report.errored_count == 1
        assert report.errors and "bad" in report.errors[0]

    def test_candidate_ordering(self, tmp_path):
        corpus = Corpus(tmp_path)
        base = png_bytes(textured_rgb(309, 120, 160))
        corpus.add("far-accept", reencode_jpeg(base, quality=70), SEED_TEXT)
        corpus.add("near-accept", base, SEED_TEXT)
        corpus.add("near-reject", reencode_jpeg(base, quality=97), TWIN_TEXT)
        seed = make_seed(tmp_path, base, SEED_TEXT)
        candidates, _ = corpus.run(seed)
        assert [c.image_id for c in candidates] == [
            "near-accept", "far-accept", "near-reject"]

    def test_token_order_permutation_changes_nothing(self, tmp_path):
        # Extraction order of text regions varies by engine; with character
        # 4-grams at the 0.05 threshold the decisions must not move.
        text_lines = "FRAUD AT THE COUNT\nOBSERVERS REMOVED\nSTOP THE STEAL"
        permuted = "STOP THE STEAL\nFRAUD AT THE COUNT\nOBSERVERS REMOVED"
        base = png_bytes(textured_rgb(310, 120, 160))

        def run_with(match_text: str):
            sub = self_tmp / match_text[:4].strip().replace(" ", "_")
            sub.mkdir(exist_ok=True)
            corpus = Corpus(sub)
            corpus.add("m-same", reencode_jpeg(base), match_text)
            corpus.add("m-twin", reencode_jpeg(base, quality=93), TWIN_TEXT)
            seed = make_seed(sub, base, text_lines)
            candidates, _ = corpus.run(seed)
            return {c.image_id: c.decision for c in candidates}

        self_tmp = tmp_path
        assert run_with(text_lines) == run_with(permuted)

    def test_determinism_byte_identical_output(self, tmp_path):
        base = png_bytes(textured_rgb(311, 120, 160))

        def run_once(sub: Path) -> str:
            sub.mkdir()
            corpus = Corpus(sub)
            corpus.add("m0", reencode_jpeg(base, 90), SEED_TEXT)
            corpus.add("m1", reencode_jpeg(base, 85), TWIN_TEXT)
            corpus.add("m2", reencode_jpeg(base, 80), SEED_TEXT.lower())
            seed = make_seed(sub, base, SEED_TEXT)
            candidates, _ = corpus.run(seed)
            out = sub / "candidates.jsonl"
            write_candidates_jsonl(out, candidates)
            return out.read_text()

        assert run_once(tmp_path / "r1") == run_once(tmp_path / "r2")


class TestBatchQuery:
    def test_disjoint_seeds_union_adds(self, tmp_path):
        corpus = Corpus(tmp_path)
        base_a = png_bytes(textured_rgb(320, 120, 160))
        base_b = png_bytes(textured_rgb(321, 120, 160))
        corpus.add("a1", reencode_jpeg(base_a), "text a")
        corpus.add("a2", reencode_jpeg(base_a, 85), "text a")
        corpus.add("b1", reencode_jpeg(base_b), "text b")
        seeds = [make_seed(tmp_path, base_a, "text a", "qa"),
                 make_seed(tmp_path, base_b, "text b", "qb")]
        result = batch_query(seeds, PipelineConfig(), corpus.index,
                             corpus.provider, corpus.cache, corpus.images)
        assert len(result.candidates) == 3
        assert result.reports["qa"].visual_match_count == 2
        assert result.reports["qb"].visual_match_count == 1

    def test_shared_image_one_candidate_two_provenances(self, tmp_path):
        corpus = Corpus(tmp_path)
        base = png_bytes(textured_rgb(322, 120, 160))
        corpus.add("shared", reencode_jpeg(base), "common text")
        seeds = [make_seed(tmp_path, base, "common text", "q1"),
                 make_seed(tmp_path, reencode_jpeg(base, 97), "common text", "q2")]
        result = batch_query(seeds, PipelineConfig(), corpus.index,
                             corpus.provider, corpus.cache, corpus.images)
        assert len(result.candidates) == 1
        cand = result.candidates[0]
        assert cand.image_id == "shared"
        assert {p.query_id for p in cand.provenance} == {"q1", "q2"}
        assert cand.decision is Decision.ACCEPTED

    def test_ocr_once_per_unique_hash_across_batch(self, tmp_path):
        corpus = Corpus(tmp_path)
        base = png_bytes(textured_rgb(323, 120, 160))
        corpus.add("shared", reencode_jpeg(base), "common text")
        seeds = [make_seed(tmp_path, base, "common text", "q1"),
                 make_seed(tmp_path, reencode_jpeg(base, 97), "common text", "q2")]
        batch_query(seeds, PipelineConfig(), corpus.index, corpus.provider,
                    corpus.cache, corpus.images)
        # two seed extractions + one for the shared match
        assert corpus.provider.calls == 3

    def test_per_seed_fail_soft(self, tmp_path):
        corpus = Corpus(tmp_path)
        base = png_bytes(textured_rgb(324, 120, 160))
        corpus.add("m", reencode_jpeg(base), "text")
        good = make_seed(tmp_path, base, "text", "good")
        bad = SeedImage(query_id="bad", data=b"not an image")
        result = batch_query([good, bad], PipelineConfig(), corpus.index,
                             corpus.provider, corpus.cache, corpus.images)
        assert "bad" in result.failed_seeds
        assert len(result.candidates) == 1

    def test_all_seeds_failing_raises(self, tmp_path):
        corpus = Corpus(tmp_path)
        corpus.add("m", png_bytes(textured_rgb(325, 120, 160)), "text")
        bad = SeedImage(query_id="bad", data=b"nope")
        with pytest.raises(PixelmodError):
            batch_query([bad], PipelineConfig(), corpus.index, corpus.provider,
                        corpus.cache, corpus.images)

    def test_empty_seed_list_rejected(self, tmp_path):
        corpus = Corpus(tmp_path)
        with pytest.raises(ValueError):
            batch_query([], PipelineConfig(), corpus.index, corpus.provider,
                        corpus.cache, corpus.images)


class TestConfig:
    def test_defaults(self):
        config = PipelineConfig()
        assert config.hash_kind is HashKind.PDQ256
        assert config.theta_visual == 90
        assert config.text_metric == TextMetric(MetricKind.JACCARD_NGRAM, 4)
        assert config.theta_textual == 0.05
        assert config.empty_query_policy is EmptyQueryPolicy.ACCEPT_VISUAL_ONLY

    def test_radius_bounded_by_bit_width(self):
        with pytest.raises(ValueError):
            PipelineConfig(hash_kind=HashKind.PHASH64, theta_visual=65)

    def test_dict_round_trip(self):
        config = PipelineConfig(hash_kind=HashKind.PHASH64, theta_visual=8,
                                text_metric=TextMetric(MetricKind.JARO_WINKLER),
                                theta_textual=0.4,
                                empty_query_policy=EmptyQueryPolicy.REJECT_ALL)
        assert PipelineConfig.from_dict(config.to_dict()) == config

    def test_candidate_json_schema_version(self, tmp_path):
        corpus = Corpus(tmp_path)
        base = png_bytes(textured_rgb(326, 120, 160))
        corpus.add("m", reencode_jpeg(base), SEED_TEXT)
        candidates, _ = corpus.run(make_seed(tmp_path, base, SEED_TEXT))
        out = tmp_path / "c.jsonl"
        write_candidates_jsonl(out, candidates)
        doc = json.loads(out.read_text().splitlines()[0])
        assert doc["schema_version"] == 1
        assert doc["decision"] == "accepted"
