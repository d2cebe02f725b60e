"""Visual soft-moderation candidate finder.

Seed images known to be misleading are matched against a corpus by
perceptual-hash range search, then refined by comparing OCR overlay text,
yielding vetted candidates for human review.
"""

from .hashing import (
    HashKind,
    LuminancePlane,
    PerceptualHash,
    decode_image,
    hamming,
    pdqhash256,
    phash64,
)
from .index import BinaryIndex, IndexConfig, IndexKind, SearchHit
from .ocr import LabelCache, OcrLabel, OcrProvider, SidecarProvider, normalize
from .pipeline import (
    BatchCandidate,
    Decision,
    EmptyQueryPolicy,
    ModerationCandidate,
    PipelineConfig,
    QueryReport,
    SeedImage,
    batch_query,
    query,
)
from .stories import ClusterParams, ImageStory, PolicyCategory, cluster, moderation_report
from .store import CorpusStore, ManifestEntry, read_manifest
from .textsim import MetricKind, TextMetric, similarity

__version__ = "0.1.0"

__all__ = [
    "BatchCandidate",
    "BinaryIndex",
    "ClusterParams",
    "CorpusStore",
    "Decision",
    "EmptyQueryPolicy",
    "HashKind",
    "ImageStory",
    "IndexConfig",
    "IndexKind",
    "LabelCache",
    "LuminancePlane",
    "ManifestEntry",
    "MetricKind",
    "ModerationCandidate",
    "OcrLabel",
    "OcrProvider",
    "PerceptualHash",
    "PipelineConfig",
    "PolicyCategory",
    "QueryReport",
    "SearchHit",
    "SeedImage",
    "SidecarProvider",
    "TextMetric",
    "batch_query",
    "cluster",
    "decode_image",
    "hamming",
    "moderation_report",
    "normalize",
    "pdqhash256",
    "phash64",
    "query",
    "read_manifest",
    "similarity",
]
