"""Ranking metrics and nonparametric significance tests.

Precision@K, Recall@K and NDCG@K follow the recommender-systems
conventions: relevance is binary membership of a recommended track in the
user's holdout set, and the recall/IDCG normalizer is ``min(K, N_u)`` so a
perfect ranking always scores 1.0.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import chi2, norm

#: sample size at or below which the Wilcoxon test enumerates the exact
#: null distribution instead of using the normal approximation
WILCOXON_EXACT_MAX_N = 25


def precision_at_k(recommendations: Sequence[int], holdout: Iterable[int], k: int) -> float:
    """Fraction of the top-k recommendations found in the holdout set."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    relevant = set(holdout)
    hits = sum(1 for t in recommendations[:k] if t in relevant)
    return hits / k


def recall_at_k(recommendations: Sequence[int], holdout: Iterable[int], k: int) -> float:
    """Hits in the top-k divided by min(k, |holdout|).

    The min() normalizer means a user with fewer than k holdout items can
    still reach recall 1.0 when all of them are retrieved.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    relevant = set(holdout)
    if not relevant:
        return 0.0
    hits = sum(1 for t in recommendations[:k] if t in relevant)
    return hits / min(k, len(relevant))


def dcg_at_k(recommendations: Sequence[int], holdout: Iterable[int], k: int) -> float:
    """Discounted cumulative gain: sum of rel(i) / log2(i + 1) up to rank k."""
    relevant = set(holdout)
    return sum(
        1.0 / math.log2(i + 1)
        for i, t in enumerate(recommendations[:k], start=1)
        if t in relevant
    )


def ndcg_at_k(recommendations: Sequence[int], holdout: Iterable[int], k: int) -> float:
    """DCG normalized by the ideal DCG with min(k, |holdout|) leading ones."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    relevant = set(holdout)
    if not relevant:
        return 0.0
    ideal_hits = min(k, len(relevant))
    idcg = sum(1.0 / math.log2(i + 1) for i in range(1, ideal_hits + 1))
    dcg = dcg_at_k(recommendations, relevant, k)
    return dcg / idcg


def _signed_rank_sums(diffs: np.ndarray) -> tuple[float, float, np.ndarray]:
    """Rank |d| with average ranks on ties; return (W+, W-, doubled ranks).

    Doubled ranks are exact integers even under ties (the average of a run
    of integer positions doubles to an integer), which keeps the exact
    enumeration free of floating-point drift.
    """
    order = np.argsort(np.abs(diffs), kind="stable")
    abs_sorted = np.abs(diffs)[order]
    n = len(diffs)
    doubled = np.zeros(n, dtype=np.int64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and abs_sorted[j + 1] == abs_sorted[i]:
            j += 1
        # positions i+1 .. j+1 (1-based) share rank (i+j+2)/2; doubled: i+j+2
        doubled[i : j + 1] = i + j + 2
        i = j + 1
    ranks_doubled = np.empty(n, dtype=np.int64)
    ranks_doubled[order] = doubled
    pos = diffs > 0
    w_plus = float(ranks_doubled[pos].sum()) / 2.0
    w_minus = float(ranks_doubled[~pos].sum()) / 2.0
    return w_plus, w_minus, ranks_doubled


def _wilcoxon_exact_p(ranks_doubled: np.ndarray, w_min_doubled: int) -> float:
    """Two-sided exact p by dynamic programming over all sign patterns.

    counts[s] is the number of sign assignments whose doubled positive-rank
    sum equals s; the distribution is symmetric, so the two-sided p-value
    is 2 * P(W <= min(W+, W-)).
    """
    total = int(ranks_doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in ranks_doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    n_patterns = 2.0 ** len(ranks_doubled)
    p = 2.0 * counts[: w_min_doubled + 1].sum() / n_patterns
    return min(1.0, p)


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sided Wilcoxon signed-rank p-value for paired samples.

    Zero differences are dropped and tied absolute differences receive
    average ranks. Up to n = 25 retained pairs the exact null distribution
    is enumerated; beyond that a normal approximation with continuity
    correction and tie-adjusted variance is used. Returns 1.0 when every
    pair is tied.
    """
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    if a_arr.shape != b_arr.shape:
        raise ValueError(f"paired samples differ in length: {a_arr.shape} vs {b_arr.shape}")
    diffs = a_arr - b_arr
    diffs = diffs[diffs != 0.0]
    n = len(diffs)
    if n == 0:
        return 1.0
    w_plus, w_minus, ranks_doubled = _signed_rank_sums(diffs)
    w_min = min(w_plus, w_minus)
    if n <= WILCOXON_EXACT_MAX_N:
        return _wilcoxon_exact_p(ranks_doubled, int(round(2.0 * w_min)))
    mean = n * (n + 1) / 4.0
    # tie correction: sum over tie groups of (t^3 - t) / 48
    _, tie_counts = np.unique(ranks_doubled, return_counts=True)
    tie_term = float(((tie_counts.astype(np.float64) ** 3) - tie_counts).sum()) / 48.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    if var <= 0:
        return 1.0
    z = (w_min - mean + 0.5) / math.sqrt(var)
    return min(1.0, 2.0 * float(norm.cdf(z)))


def friedman_test(values: np.ndarray) -> tuple[float, float]:
    """Friedman rank test across models; returns (statistic, p-value).

    ``values`` is an (n_subjects, m_models) array. Each row is ranked with
    average ranks on ties and the classic chi-square statistic
    ``12n / (m (m+1)) * sum_j (rbar_j - (m+1)/2)^2`` is referred to a
    chi-square distribution with m - 1 degrees of freedom.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D (subjects x models) array, got shape {arr.shape}")
    n, m = arr.shape
    if n < 1 or m < 2:
        raise ValueError(f"need >= 1 subjects and >= 2 models, got {arr.shape}")
    ranks = _average_ranks_rows(arr)
    mean_ranks = ranks.mean(axis=0)
    stat = 12.0 * n / (m * (m + 1)) * float(((mean_ranks - (m + 1) / 2.0) ** 2).sum())
    p = float(chi2.sf(stat, m - 1))
    return stat, p


def _average_ranks_rows(arr: np.ndarray) -> np.ndarray:
    """Row-wise ranks (1-based) with ties replaced by their average rank."""
    n, m = arr.shape
    ranks = np.empty_like(arr)
    for i in range(n):
        order = np.argsort(arr[i], kind="stable")
        row_ranks = np.empty(m, dtype=np.float64)
        j = 0
        while j < m:
            k = j
            while k + 1 < m and arr[i, order[k + 1]] == arr[i, order[j]]:
                k += 1
            row_ranks[order[j : k + 1]] = (j + k + 2) / 2.0
            j = k + 1
        ranks[i] = row_ranks
    return ranks
