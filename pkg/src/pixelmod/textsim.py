"""String similarity scores in [0, 1] for comparing overlay-text labels.

Four metrics are supported; all share two edge rules so the retrieval
pipeline behaves monotonically when labels are missing: two empty strings
score 1.0, and exactly one empty string scores 0.0.

Note the LCS metric keeps its metric-space form 1 - |LCS|/max(|a|,|b|)
as the reported score (so identical non-empty strings score 0.0 under it);
the worked reference values downstream depend on that form.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

JARO_WINKLER_PREFIX_SCALE = 0.1
JARO_WINKLER_PREFIX_CAP = 4
JARO_WINKLER_BOOST_THRESHOLD = 0.7  # prefix boost applies only above this


class MetricKind(enum.Enum):
    NORM_LEVENSHTEIN = "norm_levenshtein"
    JARO_WINKLER = "jaro_winkler"
    METRIC_LCS = "metric_lcs"
    JACCARD_NGRAM = "jaccard"


@dataclass(frozen=True)
class TextMetric:
    kind: MetricKind
    n: int | None = None  # gram size, JACCARD_NGRAM only

    def __post_init__(self) -> None:
        if (self.n is not None) != (self.kind is MetricKind.JACCARD_NGRAM):
            raise ValueError("n is given iff kind is JACCARD_NGRAM")
        if self.n is not None and not 1 <= self.n <= 5:
            raise ValueError("gram size n must be in [1, 5]")

    def to_str(self) -> str:
        if self.kind is MetricKind.JACCARD_NGRAM:
            return f"{self.kind.value}:{self.n}"
        return self.kind.value

    @classmethod
    def from_str(cls, text: str) -> "TextMetric":
        name, _, arg = text.partition(":")
        kind = MetricKind(name)
        if kind is MetricKind.JACCARD_NGRAM:
            return cls(kind, int(arg) if arg else 4)
        if arg:
            raise ValueError(f"metric {name} takes no argument")
        return cls(kind)

    def __str__(self) -> str:
        return self.to_str()


def similarity(metric: TextMetric, a: str, b: str) -> float:
    """Score two already-normalized strings under ``metric``."""
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    if metric.kind is MetricKind.NORM_LEVENSHTEIN:
        return 1.0 - levenshtein_distance(a, b) / max(len(a), len(b))
    if metric.kind is MetricKind.JARO_WINKLER:
        return jaro_winkler(a, b)
    if metric.kind is MetricKind.METRIC_LCS:
        return 1.0 - lcs_length(a, b) / max(len(a), len(b))
    assert metric.n is not None
    return jaccard_ngram(a, b, metric.n)


def levenshtein_distance(a: str, b: str) -> int:
    """Unit-cost edit distance, two-row dynamic program."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb))
        prev = cur
    return prev[-1]


def lcs_length(a: str, b: str) -> int:
    """Length of the longest common subsequence."""
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0] * (len(b) + 1)
        for j, cb in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if ca == cb else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def ngrams(text: str, n: int) -> frozenset[str]:
    """Character n-gram set; a non-empty string shorter than n is one gram."""
    if not text:
        return frozenset()
    if len(text) < n:
        return frozenset((text,))
    return frozenset(text[i:i + n] for i in range(len(text) - n + 1))


def jaccard_ngram(a: str, b: str, n: int) -> float:
    ga, gb = ngrams(a, n), ngrams(b, n)
    union = ga | gb
    if not union:
        return 1.0
    return len(ga & gb) / len(union)


def jaro(a: str, b: str) -> float:
    if a == b:
        return 1.0
    la, lb = len(a), len(b)
    if la == 0 or lb == 0:
        return 0.0
    window = max(max(la, lb) // 2 - 1, 0)
    a_taken = [False] * la
    b_taken = [False] * lb
    matches = 0
    for i, ch in enumerate(a):
        lo, hi = max(0, i - window), min(lb, i + window + 1)
        for j in range(lo, hi):
            if not b_taken[j] and b[j] == ch:
                a_taken[i] = b_taken[j] = True
                matches += 1
                break
    if matches == 0:
        return 0.0
    a_matched = [ch for i, ch in enumerate(a) if a_taken[i]]
    b_matched = [ch for j, ch in enumerate(b) if b_taken[j]]
    half_transpositions = sum(x != y for x, y in zip(a_matched, b_matched))
    t = half_transpositions / 2
    return (matches / la + matches / lb + (matches - t) / matches) / 3


def jaro_winkler(a: str, b: str) -> float:
    base = jaro(a, b)
    if base <= JARO_WINKLER_BOOST_THRESHOLD:
        return base
    prefix = 0
    for x, y in zip(a, b):
        if x != y or prefix == JARO_WINKLER_PREFIX_CAP:
            break
        prefix += 1
    return base + prefix * JARO_WINKLER_PREFIX_SCALE * (1.0 - base)


def all_metrics(jaccard_n: tuple[int, ...] = (1, 2, 3, 4, 5)) -> list[TextMetric]:
    """Every metric variant, with the given Jaccard gram sizes."""
    out = [
        TextMetric(MetricKind.NORM_LEVENSHTEIN),
        TextMetric(MetricKind.JARO_WINKLER),
        TextMetric(MetricKind.METRIC_LCS),
    ]
    out.extend(TextMetric(MetricKind.JACCARD_NGRAM, n) for n in jaccard_n)
    return out
