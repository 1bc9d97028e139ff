"""Cluster characterization: IDF-filtered track charts and demographics.

Track IDF here is log10(N / n_i) over listening events, which scores
globally frequent tracks low. Charts exclude tracks under the IDF
threshold so each cluster's list shows what distinguishes it instead of
what everyone plays. The filter affects reporting only; recommendation
stages never see it.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .cluster import ClusterAssignment
from .ingest import Dataset

DEFAULT_IDF_THRESHOLD = 4.2


@dataclass(frozen=True)
class TrackStats:
    n_total_les: int
    per_track_les: dict[int, int]
    idf: dict[int, float]


@dataclass(frozen=True)
class DemographicSummary:
    age_quartiles: tuple[float, float, float, float, float]  # min, q1, median, q3, max
    female_male_ratio: float  # inf when the cluster has no male users
    mean_playcount_per_user: float


@dataclass(frozen=True)
class ClusterProfile:
    cluster_id: int
    top_tracks: list[tuple[int, int]]  # (track_id, playcount), rank order
    genre_counts: dict[str, int] = field(default_factory=dict)
    age_quartiles: tuple[float, ...] = (math.nan,) * 5
    female_male_ratio: float = math.nan
    mean_playcount_per_user: float = math.nan


def compute_idf(dataset: Dataset) -> TrackStats:
    """Per-track inverse document frequency over listening events."""
    n_total = len(dataset.events)
    if n_total < 1:
        raise ValueError("cannot compute IDF over an empty dataset")
    counts = Counter(e.track_id for e in dataset.events)
    idf = {t: math.log10(n_total / n) for t, n in counts.items() if n > 0}
    return TrackStats(n_total_les=n_total, per_track_les=dict(counts), idf=idf)


def filter_dominating(stats: TrackStats, threshold: float = DEFAULT_IDF_THRESHOLD) -> set[int]:
    """Tracks whose IDF falls below the threshold: the dominating ones.

    Low IDF means high global frequency, so these are the tracks played
    broadly everywhere; strict inequality keeps a track sitting exactly
    at the threshold.
    """
    return {t for t, v in stats.idf.items() if v < threshold}


def _cluster_countries(dataset: Dataset, assignment: ClusterAssignment) -> dict[int, set[str]]:
    if len(assignment.labels) != dataset.n_countries:
        raise ValueError(
            f"assignment covers {len(assignment.labels)} countries, dataset has {dataset.n_countries}"
        )
    groups: dict[int, set[str]] = defaultdict(set)
    for code, idx in dataset.country_index.items():
        groups[int(assignment.labels[idx])].add(code)
    return groups


def cluster_demographics(
    dataset: Dataset, assignment: ClusterAssignment
) -> dict[int, DemographicSummary]:
    """Five-number age summary, female/male ratio and mean playcount.

    Users without an age are excluded from the age summary. Playcount is
    the user's event count within the filtered corpus rather than the
    raw metadata field, so the summary describes the data actually
    analyzed. Noise countries (label -1) get no entry.
    """
    groups = _cluster_countries(dataset, assignment)
    events_per_user = Counter(e.user_id for e in dataset.events)
    out: dict[int, DemographicSummary] = {}
    for cid in range(assignment.n_clusters):
        members = [u for u in dataset.users.values() if u.country in groups.get(cid, ())]
        ages = [u.age for u in members if u.age is not None]
        if ages:
            q = tuple(float(v) for v in np.percentile(ages, [0, 25, 50, 75, 100]))
        else:
            q = (math.nan,) * 5
        n_f = sum(1 for u in members if u.gender == "f")
        n_m = sum(1 for u in members if u.gender == "m")
        if n_m > 0:
            ratio = n_f / n_m
        elif n_f > 0:
            ratio = math.inf
        else:
            ratio = math.nan
        mean_pc = (
            sum(events_per_user[u.user_id] for u in members) / len(members)
            if members
            else math.nan
        )
        out[cid] = DemographicSummary(
            age_quartiles=q, female_male_ratio=ratio, mean_playcount_per_user=mean_pc
        )
    return out


def cluster_playcounts(dataset: Dataset, assignment: ClusterAssignment) -> dict[int, Counter]:
    """Within-cluster playcount per track, unfiltered."""
    groups = _cluster_countries(dataset, assignment)
    country_to_cluster = {}
    for cid, codes in groups.items():
        for code in codes:
            country_to_cluster[code] = cid
    counts: dict[int, Counter] = {cid: Counter() for cid in range(assignment.n_clusters)}
    for e in dataset.events:
        cid = country_to_cluster[dataset.users[e.user_id].country]
        if cid >= 0:
            counts[cid][e.track_id] += 1
    return counts


def cluster_top_tracks(
    dataset: Dataset,
    assignment: ClusterAssignment,
    stats: TrackStats,
    k: int = 10,
    idf_threshold: float = DEFAULT_IDF_THRESHOLD,
    tags: dict[int, list[str]] | None = None,
) -> list[ClusterProfile]:
    """Ranked per-cluster charts with dominating tracks removed.

    Ranks by within-cluster playcount descending, ties by track id
    ascending. Fewer than k eligible tracks yield a shorter list. When a
    track → tags mapping is given, tag counts are aggregated weighted by
    within-cluster playcount.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    removed = filter_dominating(stats, idf_threshold)
    playcounts = cluster_playcounts(dataset, assignment)
    demo = cluster_demographics(dataset, assignment)
    profiles = []
    for cid in range(assignment.n_clusters):
        eligible = [(t, n) for t, n in playcounts[cid].items() if t not in removed]
        eligible.sort(key=lambda tn: (-tn[1], tn[0]))
        top = eligible[:k]
        genre: dict[str, int] = {}
        if tags is not None:
            acc: Counter = Counter()
            for t, n in eligible:
                for tag in tags.get(t, ()):
                    acc[tag] += n
            genre = dict(sorted(acc.items()))
        d = demo[cid]
        profiles.append(
            ClusterProfile(
                cluster_id=cid,
                top_tracks=top,
                genre_counts=genre,
                age_quartiles=d.age_quartiles,
                female_male_ratio=d.female_male_ratio,
                mean_playcount_per_user=d.mean_playcount_per_user,
            )
        )
    return profiles


def parse_tags(path) -> dict[int, list[str]]:
    """Read an optional track → tag list file (track_id TAB tag,tag,...)."""
    tags: dict[int, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                continue
            try:
                tid = int(parts[0])
            except ValueError:
                continue
            tags[tid] = [t.strip() for t in parts[1].split(",") if t.strip()]
    return tags
