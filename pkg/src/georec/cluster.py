"""OPTICS density ordering and xi-based flat cluster extraction.

The ordering stage is the textbook priority-queue expansion. Extraction
follows the steep-area procedure from the OPTICS paper (Figure 19):
maximal xi-steep-down and xi-steep-up regions are matched into candidate
clusters, filtered by the significance conditions, and the surviving
spans are turned into flat labels by keeping the first non-overlapping
spans in extraction order (which puts the smallest cluster of each
steep-up region first, so nested super-clusters lose to their leaves).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embed import pairwise_distances


@dataclass(frozen=True)
class OpticsConfig:
    min_cluster_size: int = 3
    xi: float = 0.05
    max_eps: float = np.inf

    def __post_init__(self) -> None:
        if self.min_cluster_size < 2:
            raise ValueError(f"min_cluster_size must be >= 2, got {self.min_cluster_size}")
        if not 0.0 < self.xi < 1.0:
            raise ValueError(f"xi must be in (0, 1), got {self.xi}")
        if self.max_eps <= 0:
            raise ValueError(f"max_eps must be positive, got {self.max_eps}")


@dataclass(frozen=True)
class OpticsOrdering:
    """Expansion order plus per-point (not per-position) distances.

    ``reachability[p]`` and ``core_distance[p]`` belong to point p;
    ``reachability[order]`` gives the plot in processing order. The first
    point of every expansion keeps reachability infinity.
    """

    order: np.ndarray
    reachability: np.ndarray
    core_distance: np.ndarray


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray  # -1 for noise
    n_clusters: int


def optics_order(points: np.ndarray, cfg: OpticsConfig) -> OpticsOrdering:
    """Order points by density reachability.

    The core distance of a point is the distance to its
    min_cluster_size-th nearest neighbor counting the point itself, the
    convention under which a duplicated point is core at distance zero.
    Reachability of p from o is max(dist(o, p), core(o)). Each step
    processes the unprocessed point with the smallest reachability,
    breaking ties by the lowest point index; distances beyond max_eps are
    ignored.
    """
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if n < cfg.min_cluster_size:
        raise ValueError(f"need >= {cfg.min_cluster_size} points, got {n}")
    dist = pairwise_distances(x)
    kth = np.sort(dist, axis=1)[:, cfg.min_cluster_size - 1]
    core = np.where(kth <= cfg.max_eps, kth, np.inf)

    reach = np.full(n, np.inf)
    processed = np.zeros(n, dtype=bool)
    order = np.empty(n, dtype=np.int64)
    for step in range(n):
        candidates = np.flatnonzero(~processed)
        best = candidates[np.argmin(reach[candidates])]  # argmin takes lowest index on ties
        processed[best] = True
        order[step] = best
        if np.isfinite(core[best]):
            in_range = ~processed & (dist[best] <= cfg.max_eps)
            new_reach = np.maximum(core[best], dist[best])
            improved = in_range & (new_reach < reach)
            reach[improved] = new_reach[improved]
    return OpticsOrdering(order=order, reachability=reach, core_distance=core)


def _extend_region(steep: np.ndarray, xward: np.ndarray, start: int, min_size: int) -> int:
    """Last index of a maximal steep region beginning at ``start``.

    The region may bridge runs of at most ``min_size`` consecutive points
    that keep moving in the same direction without being steep; a point
    moving the other way ends it.
    """
    n = len(steep)
    non_steep_run = 0
    index, end = start, start
    while index < n:
        if steep[index]:
            non_steep_run = 0
            end = index
        elif not xward[index]:
            non_steep_run += 1
            if non_steep_run > min_size:
                break
        else:
            return end
        index += 1
    return end


@dataclass
class _SteepDownArea:
    start: int
    end: int
    maximum: float
    mib: float  # maximum reachability seen since the area ended


def _filter_sdas(sdas: list[_SteepDownArea], mib: float, xi_complement: float) -> list:
    """Drop steep-down areas no longer significant against ``mib``."""
    if np.isinf(mib):
        return []
    kept = [s for s in sdas if mib <= s.maximum * xi_complement]
    for s in kept:
        s.mib = max(s.mib, mib)
    return kept


def _xi_spans(plot: np.ndarray, xi: float, min_size: int) -> list[tuple[int, int]]:
    """Candidate cluster spans (inclusive, in ordering positions).

    Within each steep-up region's batch the smallest span comes first.
    """
    n = len(plot)
    plot = np.hstack([plot, [np.inf]])
    xic = 1.0 - xi
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = plot[:-1] / plot[1:]
        steep_up = ratio <= xic
        steep_down = ratio >= 1.0 / xic
        up = ratio < 1.0
        down = ratio > 1.0
    # two infinite neighbors are a gap, not a steep edge
    both_inf = np.isinf(plot[:-1]) & np.isinf(plot[1:])
    steep_up &= ~both_inf
    steep_down &= ~both_inf

    sdas: list[_SteepDownArea] = []
    spans: list[tuple[int, int]] = []
    index = 0
    mib = 0.0
    for steep_index in np.flatnonzero(steep_up | steep_down):
        if steep_index < index:
            continue  # inside an already-consumed region
        mib = max(mib, float(plot[index : steep_index + 1].max()))

        if steep_down[steep_index]:
            sdas = _filter_sdas(sdas, mib, xic)
            d_start = int(steep_index)
            d_end = _extend_region(steep_down, up, d_start, min_size)
            sdas.append(
                _SteepDownArea(start=d_start, end=d_end, maximum=float(plot[d_start]), mib=0.0)
            )
            index = d_end + 1
            mib = float(plot[index])
        else:
            sdas = _filter_sdas(sdas, mib, xic)
            u_start = int(steep_index)
            u_end = _extend_region(steep_up, down, u_start, min_size)
            index = u_end + 1
            mib = float(plot[index])

            batch: list[tuple[int, int]] = []
            for d in sdas:
                c_start, c_end = d.start, u_end
                # the up edge must clear everything seen since the down area
                if plot[c_end + 1] * xic < d.mib:
                    continue
                # boundary alignment (condition 4): trim the higher side
                # toward the level of the lower one
                if d.maximum * xic >= plot[c_end + 1]:
                    while plot[c_start + 1] > plot[c_end + 1] and c_start < d.end:
                        c_start += 1
                elif plot[c_end + 1] * xic >= d.maximum:
                    while plot[c_end] > d.maximum and c_end > u_start:
                        c_end -= 1
                if c_end - c_start + 1 < min_size:
                    continue
                if c_start > d.end:
                    continue
                if c_end < u_start:
                    continue
                if c_start == 0 and c_end == n - 1:
                    # a cluster holding every point carries no structure;
                    # without this, all-equidistant data collapses into one
                    # all-inclusive cluster instead of noise
                    continue
                batch.append((c_start, c_end))
            batch.reverse()  # smallest first
            spans.extend(batch)
    return spans


def extract_xi_clusters(ordering: OpticsOrdering, cfg: OpticsConfig) -> ClusterAssignment:
    """Flat labels from the reachability plot; -1 marks noise.

    Spans are accepted greedily in extraction order, skipping any that
    overlap an accepted one, then clusters are renumbered left to right
    along the ordering.
    """
    order = ordering.order
    n = len(order)
    plot = ordering.reachability[order]
    taken = np.zeros(n, dtype=bool)
    chosen: list[tuple[int, int]] = []
    for s, e in _xi_spans(plot, cfg.xi, cfg.min_cluster_size):
        if not taken[s : e + 1].any():
            taken[s : e + 1] = True
            chosen.append((s, e))
    chosen.sort()
    by_position = np.full(n, -1, dtype=np.int64)
    for label, (s, e) in enumerate(chosen):
        by_position[s : e + 1] = label
    labels = np.empty(n, dtype=np.int64)
    labels[order] = by_position
    return ClusterAssignment(labels=labels, n_clusters=len(chosen))


def cluster_points(points: np.ndarray, cfg: OpticsConfig) -> tuple[OpticsOrdering, ClusterAssignment]:
    """Convenience wrapper: order then extract."""
    ordering = optics_order(points, cfg)
    return ordering, extract_xi_clusters(ordering, cfg)
