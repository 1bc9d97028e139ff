"""Per-user context vectors: geographic one-hots and centroid distances.

Four context encodings feed the gated recommender: the user's country as
a one-hot, the country's cluster as a one-hot, and the Euclidean
distances from the user's normalized listening vector to the cluster or
country centroids. Cluster-based encodings reserve one extra slot for
users from noise countries so that every user has a context.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cluster import ClusterAssignment
from .ingest import Dataset

CONTEXT_KINDS = ("country_onehot", "cluster_onehot", "cluster_dist", "country_dist")


@dataclass(frozen=True)
class Centroids:
    kind: str  # "cluster" or "country"
    vectors: np.ndarray  # (n_groups, n_tracks), rows sum to 1
    has_noise_row: bool = False  # cluster kind: last row aggregates noise countries


@dataclass(frozen=True)
class ContextModel:
    kind: str
    vectors: np.ndarray  # (n_users, n_context)
    user_ids: tuple[int, ...]  # row order


def user_vectors(dataset: Dataset) -> tuple[tuple[int, ...], np.ndarray]:
    """Dense per-user track playcount matrix, rows sorted by user id."""
    user_ids = tuple(sorted(dataset.users))
    row_of = {u: i for i, u in enumerate(user_ids)}
    counts = np.zeros((len(user_ids), dataset.n_tracks), dtype=np.float64)
    tidx = dataset.track_index
    for e in dataset.events:
        counts[row_of[e.user_id], tidx[e.track_id]] += 1.0
    return user_ids, counts


def _country_groups(dataset: Dataset, assignment: ClusterAssignment, kind: str) -> list[list[int]]:
    """Country dense indices per group; cluster kind appends a noise group."""
    if kind == "country":
        return [[i] for i in range(dataset.n_countries)]
    if len(assignment.labels) != dataset.n_countries:
        raise ValueError("assignment does not cover the dataset's countries")
    groups = [[] for _ in range(assignment.n_clusters)]
    noise = []
    for idx, lab in enumerate(assignment.labels):
        if lab == -1:
            noise.append(idx)
        else:
            groups[int(lab)].append(idx)
    if noise:
        groups.append(noise)
    return groups


def compute_centroids(dataset: Dataset, assignment: ClusterAssignment, kind: str) -> Centroids:
    """Aggregate listening events per group and normalize to sum 1.

    kind="country" treats every country as its own group; kind="cluster"
    groups countries by label, plus one combined group for noise
    countries when any exist.
    """
    if kind not in ("cluster", "country"):
        raise ValueError(f"kind must be 'cluster' or 'country', got {kind!r}")
    groups = _country_groups(dataset, assignment, kind)
    by_country = np.zeros((dataset.n_countries, dataset.n_tracks), dtype=np.float64)
    tidx, cidx, users = dataset.track_index, dataset.country_index, dataset.users
    for e in dataset.events:
        by_country[cidx[users[e.user_id].country], tidx[e.track_id]] += 1.0
    vectors = np.zeros((len(groups), dataset.n_tracks), dtype=np.float64)
    for g, members in enumerate(groups):
        agg = by_country[members].sum(axis=0)
        total = agg.sum()
        if total <= 0:
            raise ValueError(f"group {g} ({kind}) has no listening events")
        vectors[g] = agg / total
    has_noise = kind == "cluster" and len(groups) > assignment.n_clusters
    return Centroids(kind=kind, vectors=vectors, has_noise_row=has_noise)


def _normalize_rows(m: np.ndarray, mode: str) -> np.ndarray:
    if mode == "none":
        return m
    if mode == "sum":
        denom = m.sum(axis=1, keepdims=True)
    elif mode == "l2":
        denom = np.linalg.norm(m, axis=1, keepdims=True)
    else:
        raise ValueError(f"unknown normalization {mode!r}")
    if np.any(denom == 0):
        raise ValueError("cannot normalize an all-zero listening vector")
    return m / denom


def context_for_counts(
    counts: np.ndarray,
    country_of: np.ndarray,
    assignment: ClusterAssignment,
    centroids: Centroids | None,
    kind: str,
    normalize: str = "sum",
) -> np.ndarray:
    """Context rows for arbitrary listening-count rows.

    country_of gives each row's dense country index. One-hot kinds need
    no centroids; distance kinds compare each row's normalized counts
    (sum normalization by default, matching the centroid scale) against
    every centroid row. Serving a user from partial history is just a
    matter of passing the partial counts here.
    """
    if kind not in CONTEXT_KINDS:
        raise ValueError(f"kind must be one of {CONTEXT_KINDS}, got {kind!r}")
    counts = np.atleast_2d(np.asarray(counts, dtype=np.float64))
    country_of = np.asarray(country_of)
    if country_of.shape[0] != counts.shape[0]:
        raise ValueError("one country index required per counts row")

    if kind == "country_onehot":
        n_countries = len(assignment.labels)
        vec = np.zeros((counts.shape[0], n_countries))
        vec[np.arange(counts.shape[0]), country_of] = 1.0
    elif kind == "cluster_onehot":
        labels = assignment.labels
        any_noise = bool(np.any(labels == -1))
        width = assignment.n_clusters + (1 if any_noise else 0)
        vec = np.zeros((counts.shape[0], width))
        for row, c in enumerate(country_of):
            lab = int(labels[c])
            vec[row, lab if lab != -1 else width - 1] = 1.0
    else:
        expected = "cluster" if kind == "cluster_dist" else "country"
        if centroids is None or centroids.kind != expected:
            raise ValueError(f"{kind} requires centroids of kind {expected!r}")
        v = _normalize_rows(counts, normalize)
        diffs = v[:, None, :] - centroids.vectors[None, :, :]
        vec = np.sqrt((diffs**2).sum(axis=2))
    return vec


def build_context(
    dataset: Dataset,
    assignment: ClusterAssignment,
    centroids: Centroids | None,
    kind: str,
    normalize: str = "sum",
) -> ContextModel:
    """Context matrix for every dataset user, rows ordered by user id."""
    if len(assignment.labels) != dataset.n_countries:
        raise ValueError("assignment does not cover the dataset's countries")
    user_ids, counts = user_vectors(dataset)
    cidx, users = dataset.country_index, dataset.users
    country_of = np.array([cidx[users[u].country] for u in user_ids])
    vec = context_for_counts(counts, country_of, assignment, centroids, kind, normalize)
    return ContextModel(kind=kind, vectors=vec, user_ids=user_ids)
