"""Tests for the country feature matrix and PCA reduction."""

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from georec.countrymap import CountryTrackMatrix, build_matrix, pca_reduce
from georec.ingest import Dataset, FilterConfig, ListeningEvent, UserRecord, apply_filters, generate_synthetic


def _dataset(rows, user_country):
    """rows: (user_id, track_id) pairs; user_country: {uid: code}."""
    events = tuple(ListeningEvent(u, 0, 0, t, i) for i, (u, t) in enumerate(rows))
    users = {u: UserRecord(u, country=c) for u, c in user_country.items()}
    tracks = sorted({t for _, t in rows})
    countries = sorted(set(user_country.values()))
    return Dataset(
        events=events,
        users=users,
        track_index={t: i for i, t in enumerate(tracks)},
        country_index={c: i for i, c in enumerate(countries)},
    )


def test_build_matrix_normalizes_counts():
    rows = [(0, 10)] * 2 + [(0, 11)] * 2 + [(0, 12)] * 4
    ds = _dataset(rows, {0: "AA"})
    m = build_matrix(ds)
    assert m.row_countries == ("AA",)
    np.testing.assert_allclose(m.values, [[0.25, 0.25, 0.5]], atol=1e-15)


def test_build_matrix_identical_countries_identical_rows():
    rows = [(0, 1), (0, 2), (0, 2), (1, 1), (1, 2), (1, 2)]
    ds = _dataset(rows, {0: "AA", 1: "BB"})
    m = build_matrix(ds)
    assert np.linalg.norm(m.values[0] - m.values[1]) == 0.0


def test_build_matrix_matches_recount_on_synthetic():
    events, users, _ = generate_synthetic(
        n_countries=6, users_per_country=6, n_tracks=50, archetype_count=3, skew=0.8, seed=2
    )
    ds = apply_filters(events, users, FilterConfig(1, 1, 1))
    m = build_matrix(ds)
    assert np.all(np.abs(m.values.sum(axis=1) - 1.0) < 1e-12)
    # recount entry by entry from the raw events
    for code, ci in ds.country_index.items():
        country_events = [e for e in ds.events if ds.users[e.user_id].country == code]
        total = len(country_events)
        for tid, ti in ds.track_index.items():
            n = sum(1 for e in country_events if e.track_id == tid)
            assert m.values[ci, ti] == pytest.approx(n / total, abs=1e-15)


def test_build_matrix_rejects_empty_country():
    ds = _dataset([(0, 1)], {0: "AA"})
    bad = Dataset(
        events=ds.events,
        users=ds.users,
        track_index=ds.track_index,
        country_index={"AA": 0, "ZZ": 1},
    )
    with pytest.raises(ValueError, match="ZZ"):
        build_matrix(bad)


def test_pca_recovers_rank_two_data():
    rng = np.random.default_rng(0)
    basis = rng.normal(size=(2, 30))
    x = rng.normal(size=(20, 2)) @ basis
    res = pca_reduce(x, 2)
    assert res.explained_variance_ratio.sum() >= 1.0 - 1e-6
    assert res.projected.shape == (20, 2)


def test_pca_line_preserves_distance_order():
    t = np.array([0.0, 1.0, 3.0, 7.0, 20.0])
    direction = np.array([1.0, 2.0, -1.0])
    x = t[:, None] * direction[None, :] + 5.0
    res = pca_reduce(x, 1)
    orig = pdist(x)
    proj = pdist(res.projected)
    assert np.array_equal(np.argsort(orig), np.argsort(proj))
    np.testing.assert_allclose(proj, orig, rtol=1e-12)


def test_pca_ratios_match_full_svd_oracle():
    rng = np.random.default_rng(123)
    x = rng.normal(size=(50, 500))
    res = pca_reduce(x, 10)
    centered = x - x.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    expected = s[:10] ** 2 / (s**2).sum()
    np.testing.assert_allclose(res.explained_variance_ratio, expected, atol=1e-6)
    # non-increasing, cumulative <= 1
    assert np.all(np.diff(res.explained_variance_ratio) <= 1e-12)
    assert res.explained_variance_ratio.sum() <= 1 + 1e-9


def test_pca_matches_sklearn():
    sklearn_pca = pytest.importorskip("sklearn.decomposition").PCA
    rng = np.random.default_rng(8)
    x = rng.normal(size=(40, 120))
    res = pca_reduce(x, 7)
    ref = sklearn_pca(n_components=7, svd_solver="full").fit(x)
    np.testing.assert_allclose(
        res.explained_variance_ratio, ref.explained_variance_ratio_, atol=1e-10
    )
    # projections may differ by per-component sign; distances cannot
    np.testing.assert_allclose(
        pdist(res.projected), pdist(ref.transform(x)), atol=1e-8
    )


def test_pca_projection_is_a_contraction():
    rng = np.random.default_rng(77)
    for _ in range(10):
        x = rng.normal(size=(15, 40))
        res = pca_reduce(x, int(rng.integers(1, 10)))
        assert np.all(pdist(res.projected) <= pdist(x) + 1e-9)


def test_pca_ratios_invariant_to_row_permutation():
    rng = np.random.default_rng(31)
    x = rng.normal(size=(25, 60))
    perm = rng.permutation(25)
    a = pca_reduce(x, 5).explained_variance_ratio
    b = pca_reduce(x[perm], 5).explained_variance_ratio
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_pca_clamps_dims():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(5, 40))
    res = pca_reduce(x, 10)
    assert res.projected.shape == (5, 4)  # n - 1
    assert res.components.shape == (4, 40)
    narrow = pca_reduce(rng.normal(size=(30, 3)), 10)
    assert narrow.projected.shape == (30, 3)  # n_cols


def test_pca_degenerate_rows_zero_variance():
    x = np.tile(np.arange(6.0), (4, 1))
    res = pca_reduce(x, 2)
    np.testing.assert_allclose(res.explained_variance_ratio, 0.0, atol=1e-15)
    np.testing.assert_allclose(res.projected, 0.0, atol=1e-12)


def test_pca_deterministic_sign_convention():
    rng = np.random.default_rng(15)
    x = rng.normal(size=(20, 30))
    a = pca_reduce(x, 4)
    b = pca_reduce(x.copy(), 4)
    np.testing.assert_array_equal(a.components, b.components)
    np.testing.assert_array_equal(a.projected, b.projected)
    for row in a.components:
        assert row[np.argmax(np.abs(row))] > 0


def test_pca_randomized_matches_exact_on_low_rank():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(60, 8)) @ rng.normal(size=(8, 300))
    exact = pca_reduce(x, 6)
    sketch = pca_reduce(x, 6, randomized=True, seed=0)
    np.testing.assert_allclose(
        sketch.explained_variance_ratio, exact.explained_variance_ratio, atol=1e-8
    )
    np.testing.assert_allclose(pdist(sketch.projected), pdist(exact.projected), atol=1e-7)
    again = pca_reduce(x, 6, randomized=True, seed=0)
    np.testing.assert_array_equal(sketch.projected, again.projected)


def test_pca_accepts_country_matrix_wrapper():
    vals = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.25, 0.5, 0.25]])
    wrapped = CountryTrackMatrix(values=vals, row_countries=("AA", "BB", "CC"))
    res = pca_reduce(wrapped, 2)
    assert res.projected.shape == (3, 2)


def test_pca_rejects_bad_d():
    with pytest.raises(ValueError):
        pca_reduce(np.eye(3), 0)
