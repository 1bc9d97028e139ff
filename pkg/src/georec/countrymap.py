"""Country-level track features: normalized count matrix and PCA reduction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import Dataset


@dataclass(frozen=True)
class CountryTrackMatrix:
    """Row-normalized playcount shares, one row per country.

    ``values[c, t]`` is the fraction of country c's listening events that
    fall on track t (dense indices). ``row_countries`` names the rows.
    """

    values: np.ndarray
    row_countries: tuple[str, ...]


@dataclass(frozen=True)
class PcaResult:
    components: np.ndarray  # (d, n_features) orthonormal rows
    projected: np.ndarray  # (n_rows, d)
    explained_variance_ratio: np.ndarray  # (d,)
    mean: np.ndarray  # (n_features,)


def build_matrix(dataset: Dataset) -> CountryTrackMatrix:
    """Count events per (country, track) and normalize each row to sum 1."""
    n_c, n_t = dataset.n_countries, dataset.n_tracks
    counts = np.zeros((n_c, n_t), dtype=np.float64)
    cidx = dataset.country_index
    tidx = dataset.track_index
    users = dataset.users
    for e in dataset.events:
        counts[cidx[users[e.user_id].country], tidx[e.track_id]] += 1.0
    totals = counts.sum(axis=1)
    if np.any(totals == 0):
        empty = [c for c, i in cidx.items() if totals[i] == 0]
        raise ValueError(f"countries with zero events cannot be normalized: {empty}")
    values = counts / totals[:, None]
    ordered = sorted(cidx, key=cidx.get)
    return CountryTrackMatrix(values=values, row_countries=tuple(ordered))


def pca_reduce(matrix, d: int, seed: int | None = None, randomized: bool = False) -> PcaResult:
    """Project rows onto the top-d principal directions.

    Accepts either a CountryTrackMatrix or a plain 2-D array. The matrix is
    mean-centered first, and d is clamped to min(n_rows - 1, n_cols, d)
    since a centered matrix of n rows has rank at most n - 1. Variance
    ratios come from the singular values over the full centered spectrum.

    The decomposition is a full SVD by default. ``randomized=True``
    switches to a seeded range-finder sketch for inputs too wide for the
    exact path; variance ratios are then estimated from the sketch.
    """
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    x = matrix.values if isinstance(matrix, CountryTrackMatrix) else np.asarray(matrix)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {x.shape}")
    n, m = x.shape
    d = min(d, max(1, n - 1), m)
    mean = x.mean(axis=0)
    centered = x - mean

    if randomized:
        rng = np.random.default_rng(seed)
        oversample = min(m, d + 10)
        sketch = centered @ rng.standard_normal((m, oversample))
        q, _ = np.linalg.qr(sketch)
        b = q.T @ centered
        _, s_top, vt_top = np.linalg.svd(b, full_matrices=False)
        s, vt = s_top[:d], vt_top[:d]
        total_var = float((centered**2).sum())
    else:
        _, s_full, vt_full = np.linalg.svd(centered, full_matrices=False)
        s, vt = s_full[:d], vt_full[:d]
        total_var = float((s_full**2).sum())

    # fix a reproducible sign: largest-magnitude loading of each component
    # is made positive
    for i in range(vt.shape[0]):
        j = int(np.argmax(np.abs(vt[i])))
        if vt[i, j] < 0:
            vt[i] = -vt[i]
    projected = centered @ vt.T
    if total_var > 0:
        ratio = (s**2) / total_var
    else:
        ratio = np.zeros(d, dtype=np.float64)
    return PcaResult(
        components=vt.copy(),
        projected=projected,
        explained_variance_ratio=ratio,
        mean=mean,
    )
