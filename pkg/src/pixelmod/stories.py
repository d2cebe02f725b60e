"""Group detected images into stories and report moderation rates.

A story is a set of hash-similar images carrying one misleading message.
Clustering is density-based over Hamming distance; with a minimum cluster
size of 1 (the default) every point is core, so stories are exactly the
connected components of the eps-neighborhood graph and isolated images form
singleton stories.

Policy categories are human-assigned; this module only stores and reports
them.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import KindMismatch, MissingFlag
from .hashing import PerceptualHash
from .index import BinaryIndex, _pack_bits, _popcount_rows


class PolicyCategory(enum.Enum):
    PARTICIPATION = "participation"
    INTIMIDATION = "intimidation"
    OUTCOMES = "outcomes"
    SYNTHETIC_MEDIA = "synthetic_media"

    @property
    def label(self) -> str:
        return _CATEGORY_LABELS[self]

    @property
    def rule_tags(self) -> tuple[str, ...]:
        return _CATEGORY_RULES[self]


_CATEGORY_LABELS = {
    PolicyCategory.PARTICIPATION: "Participation in Civic Processes",
    PolicyCategory.INTIMIDATION: "Intimidation from Civic Processes",
    PolicyCategory.OUTCOMES: "Outcomes of Civic Processes",
    PolicyCategory.SYNTHETIC_MEDIA: "Synthetic and Manipulated Media",
}

_CATEGORY_RULES = {
    PolicyCategory.PARTICIPATION: (
        "participation-procedures", "confusion-about-officials",
        "threats-on-voting-locations",
    ),
    PolicyCategory.INTIMIDATION: (
        "votes-not-counted", "equipment-problems",
        "disruptions-at-voting-locations", "closing-of-polls",
    ),
    PolicyCategory.OUTCOMES: (
        "undermining-confidence", "election-rigging", "ballot-tampering",
        "vote-tallying", "premature-victory", "doubt-on-outcome",
        "interference-with-results",
    ),
    PolicyCategory.SYNTHETIC_MEDIA: (
        "deceptively-altered", "shared-with-malicious-intent",
    ),
}


@dataclass(frozen=True)
class ClusterParams:
    eps: int = 90
    min_cluster_size: int = 1

    def __post_init__(self) -> None:
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.min_cluster_size < 1:
            raise ValueError("min_cluster_size must be >= 1")


@dataclass(frozen=True)
class ImageStory:
    story_id: int
    members: tuple[str, ...]
    representative: str
    category: PolicyCategory | None = None
    moderated_count: int = 0

    def __post_init__(self) -> None:
        if not self.members:
            raise ValueError("a story needs at least one member")
        if self.representative not in self.members:
            raise ValueError("representative must be a member")

    def with_category(self, category: PolicyCategory) -> "ImageStory":
        return replace(self, category=category)

    def to_dict(self) -> dict:
        return {
            "story_id": self.story_id,
            "members": list(self.members),
            "representative": self.representative,
            "category": self.category.value if self.category else None,
            "moderated_count": self.moderated_count,
            "size": len(self.members),
        }


def cluster(hashes: list[tuple[str, PerceptualHash]],
            params: ClusterParams | None = None) -> list[ImageStory]:
    """Density-cluster (id, hash) pairs into stories.

    Core points have at least ``min_cluster_size`` neighbors within ``eps``
    (the point itself included); non-core points unreachable from any core
    become singleton stories so the result always partitions the input.
    Story ids follow the sorted order of representative ids.
    """
    params = params or ClusterParams()
    if not hashes:
        return []
    kinds = {h.kind for _, h in hashes}
    if len(kinds) > 1:
        raise KindMismatch(f"mixed hash kinds: {sorted(k.name for k in kinds)}")
    kind = next(iter(kinds))
    if params.eps > kind.bit_length:
        raise ValueError(f"eps exceeds {kind.bit_length}-bit width")
    ids = [i for i, _ in hashes]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate image ids")

    index = BinaryIndex(kind)
    for image_id, phash in hashes:
        index.insert(image_id, phash)
    id_pos = {image_id: pos for pos, (image_id, _) in enumerate(hashes)}
    by_id = dict(hashes)

    def neighbors(image_id: str) -> list[str]:
        return [h.image_id
                for h in index.search_range(by_id[image_id], params.eps)]

    assignment: dict[str, int] = {}
    next_cluster = 0
    for image_id in sorted(ids):
        if image_id in assignment:
            continue
        seed_neighbors = neighbors(image_id)
        if len(seed_neighbors) < params.min_cluster_size:
            continue  # not core; may still be claimed as a border point
        label = next_cluster
        next_cluster += 1
        assignment[image_id] = label
        frontier = [n for n in seed_neighbors if n != image_id]
        while frontier:
            current = frontier.pop()
            if current in assignment:
                continue
            assignment[current] = label
            reach = neighbors(current)
            if len(reach) >= params.min_cluster_size:  # expand only via cores
                frontier.extend(n for n in reach if n not in assignment)
    for image_id in sorted(ids):  # leftover noise becomes singletons
        if image_id not in assignment:
            assignment[image_id] = next_cluster
            next_cluster += 1

    grouped: dict[int, list[str]] = {}
    for image_id, label in assignment.items():
        grouped.setdefault(label, []).append(image_id)

    stories = []
    for members in grouped.values():
        members.sort()
        stories.append((_medoid(members, by_id), members))
    stories.sort(key=lambda pair: pair[0])
    return [ImageStory(story_id=pos, members=tuple(members), representative=rep)
            for pos, (rep, members) in enumerate(stories)]


def _medoid(members: list[str], by_id: dict[str, PerceptualHash]) -> str:
    """Member minimizing summed Hamming distance; ties break to lowest id."""
    if len(members) == 1:
        return members[0]
    nwords = by_id[members[0]].kind.bit_length // 64
    rows = np.stack([_pack_bits(by_id[m].bits, nwords) for m in members])
    totals = [int(_popcount_rows(rows ^ rows[i]).sum()) for i in range(len(rows))]
    best = min(range(len(members)), key=lambda i: (totals[i], members[i]))
    return members[best]


@dataclass(frozen=True)
class CategoryReportRow:
    category: PolicyCategory | None
    story_count: int
    moderated_members: int
    total_members: int

    @property
    def moderation_pct(self) -> str:
        if self.total_members == 0:
            return "0.00%"
        return f"{100.0 * self.moderated_members / self.total_members:.2f}%"

    @property
    def category_label(self) -> str:
        return self.category.label if self.category else "Unassigned"


def moderation_report(stories: list[ImageStory],
                      moderation_flags: dict[str, bool]) -> list[CategoryReportRow]:
    """Per-category story counts and moderated-member percentages.

    Every story member must have a flag; percentages are member-weighted and
    formatted to two decimals by ``CategoryReportRow.moderation_pct``.
    """
    buckets: dict[PolicyCategory | None, list[int]] = {}
    for story in stories:
        missing = [m for m in story.members if m not in moderation_flags]
        if missing:
            raise MissingFlag(f"no moderation flag for {missing[:3]}")
        moderated = sum(1 for m in story.members if moderation_flags[m])
        counts = buckets.setdefault(story.category, [0, 0, 0])
        counts[0] += 1
        counts[1] += moderated
        counts[2] += len(story.members)
    order = list(PolicyCategory) + [None]
    return [CategoryReportRow(cat, *buckets[cat])
            for cat in order if cat in buckets]


def report_rows_from_counts(
        counts: list[tuple[PolicyCategory, int, int, int]]) -> list[CategoryReportRow]:
    """Build report rows straight from stored (category, stories, moderated,
    total) counts, for rendering externally tallied tables."""
    return [CategoryReportRow(cat, stories, moderated, total)
            for cat, stories, moderated, total in counts]


def render_report_csv(rows: list[CategoryReportRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["category", "image_stories", "moderation_pct"])
    for row in rows:
        writer.writerow([row.category_label, row.story_count, row.moderation_pct])
    return buf.getvalue()


def stories_to_json(stories: list[ImageStory]) -> str:
    return json.dumps([s.to_dict() for s in stories], indent=2, sort_keys=True)
