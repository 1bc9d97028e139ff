"""Tests for IDF filtering and cluster profiles."""

import math
from collections import Counter

import numpy as np
import pytest

from georec.archetypes import (
    cluster_demographics,
    cluster_playcounts,
    cluster_top_tracks,
    compute_idf,
    filter_dominating,
    parse_tags,
)
from georec.cluster import ClusterAssignment
from georec.ingest import (
    Dataset,
    FilterConfig,
    ListeningEvent,
    UserRecord,
    apply_filters,
    generate_synthetic,
)


def _dataset(rows, users):
    events = tuple(ListeningEvent(u, 0, 0, t, i) for i, (u, t) in enumerate(rows))
    tracks = sorted({t for _, t in rows})
    countries = sorted({u.country for u in users.values()})
    return Dataset(
        events=events,
        users=users,
        track_index={t: i for i, t in enumerate(tracks)},
        country_index={c: i for i, c in enumerate(countries)},
    )


def test_idf_hand_values():
    # 1000 events total; track 0 has 10 of them
    users = {0: UserRecord(0, country="AA")}
    rows = [(0, 0)] * 10 + [(0, 1)] * 990
    ds = _dataset(rows, users)
    stats = compute_idf(ds)
    assert stats.n_total_les == 1000
    assert stats.idf[0] == pytest.approx(2.0, abs=1e-12)


def test_idf_track_equal_to_total_is_zero():
    users = {0: UserRecord(0, country="AA")}
    ds = _dataset([(0, 7)] * 50, users)
    stats = compute_idf(ds)
    assert stats.idf[7] == 0.0


def test_idf_matches_recount_on_synthetic():
    events, users, _ = generate_synthetic(
        n_countries=4, users_per_country=6, n_tracks=40, archetype_count=2, skew=0.8, seed=6
    )
    ds = apply_filters(events, users, FilterConfig(1, 1, 1))
    stats = compute_idf(ds)
    counts = Counter(e.track_id for e in ds.events)
    total = len(ds.events)
    assert stats.per_track_les == dict(counts)
    for t, n in counts.items():
        assert stats.idf[t] == pytest.approx(math.log10(total / n), abs=1e-12)
        assert stats.idf[t] >= 0.0


def test_dominating_threshold_boundary():
    class FakeStats:
        idf = {1: 4.19, 2: 4.2, 3: 0.5}

    removed = filter_dominating(FakeStats(), threshold=4.2)
    assert removed == {1, 3}


def test_planted_global_hits_are_dominating():
    events, users, _ = generate_synthetic(
        n_countries=4, users_per_country=10, n_tracks=42, archetype_count=2,
        skew=0.9, seed=3, events_per_user=60, global_hits=2,
    )
    ds = apply_filters(events, users, FilterConfig(1, 1, 1))
    stats = compute_idf(ds)
    removed = filter_dominating(stats, threshold=1.5)
    assert {40, 41} <= removed
    # signature tracks are rarer: plenty must survive a threshold this low
    assert len(stats.idf) - len(removed) > 10


def _two_cluster_fixture():
    events, users, labels = generate_synthetic(
        n_countries=4, users_per_country=5, n_tracks=30, archetype_count=2,
        skew=1.0, seed=9, events_per_user=50,
    )
    ds = apply_filters(events, users, FilterConfig(1, 1, 1))
    arr = np.array([labels[c] for c in sorted(ds.country_index)], dtype=np.int64)
    return ds, ClusterAssignment(labels=arr, n_clusters=2)


def test_top_tracks_stay_in_signature_blocks():
    ds, assignment = _two_cluster_fixture()
    stats = compute_idf(ds)
    profiles = cluster_top_tracks(ds, assignment, stats, k=10, idf_threshold=0.0)
    assert [p.cluster_id for p in profiles] == [0, 1]
    block = 15  # 30 tracks over 2 archetypes
    for p in profiles:
        lo, hi = p.cluster_id * block, (p.cluster_id + 1) * block
        assert p.top_tracks
        for t, n in p.top_tracks:
            assert lo <= t < hi
            assert n > 0
        counts = [n for _, n in p.top_tracks]
        assert counts == sorted(counts, reverse=True)


def test_single_cluster_top_track_is_global_top():
    users = {0: UserRecord(0, country="AA"), 1: UserRecord(1, country="BB")}
    rows = [(0, 5)] * 7 + [(0, 3)] * 7 + [(1, 9)] * 2
    ds = _dataset(rows, users)
    assignment = ClusterAssignment(labels=np.zeros(2, dtype=np.int64), n_clusters=1)
    stats = compute_idf(ds)
    profiles = cluster_top_tracks(ds, assignment, stats, k=2, idf_threshold=0.0)
    # tie between tracks 3 and 5 at 7 plays: lower id first
    assert profiles[0].top_tracks == [(3, 7), (5, 7)]


def test_top_k_larger_than_track_count_no_padding():
    ds, assignment = _two_cluster_fixture()
    stats = compute_idf(ds)
    profiles = cluster_top_tracks(ds, assignment, stats, k=10_000, idf_threshold=0.0)
    for p in profiles:
        assert len(p.top_tracks) == len(cluster_playcounts(ds, assignment)[p.cluster_id])


def test_dominating_filter_is_reporting_only():
    ds, assignment = _two_cluster_fixture()
    stats = compute_idf(ds)
    strict = cluster_top_tracks(ds, assignment, stats, k=5, idf_threshold=10.0)
    loose = cluster_top_tracks(ds, assignment, stats, k=5, idf_threshold=0.0)
    # demographics (membership-derived) identical; only charts change
    for a, b in zip(strict, loose):
        assert a.age_quartiles == b.age_quartiles
        assert a.female_male_ratio == b.female_male_ratio
        assert a.mean_playcount_per_user == b.mean_playcount_per_user
    # a threshold of 10 removes every track at this scale
    assert all(not p.top_tracks for p in strict)


def test_within_cluster_counts_bounded_by_global():
    events, users, labels = generate_synthetic(
        n_countries=6, users_per_country=5, n_tracks=30, archetype_count=3, skew=0.7, seed=4
    )
    ds = apply_filters(events, users, FilterConfig(1, 1, 1))
    codes = sorted(ds.country_index)
    # mark one country as noise
    arr = np.array([labels[c] for c in codes], dtype=np.int64)
    arr[0] = -1
    assignment = ClusterAssignment(labels=arr, n_clusters=3)
    per_cluster = cluster_playcounts(ds, assignment)
    global_counts = Counter(e.track_id for e in ds.events)
    for t, total in global_counts.items():
        summed = sum(per_cluster[c][t] for c in per_cluster)
        assert summed <= total
    # with no noise country the sums are exact
    assignment_full = ClusterAssignment(
        labels=np.array([labels[c] for c in codes], dtype=np.int64), n_clusters=3
    )
    per_cluster_full = cluster_playcounts(ds, assignment_full)
    for t, total in global_counts.items():
        assert sum(per_cluster_full[c][t] for c in per_cluster_full) == total


def test_demographics_hand_values():
    users = {
        0: UserRecord(0, country="AA", age=20, gender="f"),
        1: UserRecord(1, country="AA", age=30, gender="f"),
        2: UserRecord(2, country="AA", age=None, gender="f"),
        3: UserRecord(3, country="AA", age=25, gender="m"),
        4: UserRecord(4, country="AA", age=25, gender="m"),
        5: UserRecord(5, country="AA", age=25, gender="m"),
        6: UserRecord(6, country="AA", age=25, gender="m"),
        7: UserRecord(7, country="AA", age=25, gender="m"),
        8: UserRecord(8, country="AA", age=25, gender="m"),
    }
    rows = [(u, u) for u in users] + [(0, 3)]
    ds = _dataset(rows, users)
    assignment = ClusterAssignment(labels=np.zeros(1, dtype=np.int64), n_clusters=1)
    demo = cluster_demographics(ds, assignment)[0]
    # 3 female (one age-less), 6 male
    assert demo.female_male_ratio == pytest.approx(0.5)
    ages = [20, 30, 25, 25, 25, 25, 25, 25]
    assert demo.age_quartiles == tuple(np.percentile(ages, [0, 25, 50, 75, 100]))
    assert demo.mean_playcount_per_user == pytest.approx(10 / 9)


def test_demographics_median_of_two_ages():
    users = {
        0: UserRecord(0, country="AA", age=20, gender="f"),
        1: UserRecord(1, country="AA", age=30, gender="f"),
    }
    ds = _dataset([(0, 0), (1, 1)], users)
    assignment = ClusterAssignment(labels=np.zeros(1, dtype=np.int64), n_clusters=1)
    demo = cluster_demographics(ds, assignment)[0]
    assert demo.age_quartiles[2] == pytest.approx(25.0)
    assert demo.female_male_ratio == math.inf  # no male users


def test_demographics_match_recount_on_synthetic():
    events, users, labels = generate_synthetic(
        n_countries=6, users_per_country=8, n_tracks=40, archetype_count=3, skew=0.8, seed=12
    )
    ds = apply_filters(events, users, FilterConfig(1, 1, 1))
    codes = sorted(ds.country_index)
    assignment = ClusterAssignment(
        labels=np.array([labels[c] for c in codes], dtype=np.int64), n_clusters=3
    )
    demo = cluster_demographics(ds, assignment)
    for cid in range(3):
        countries = {c for c in codes if labels[c] == cid}
        members = [u for u in ds.users.values() if u.country in countries]
        ages = sorted(u.age for u in members if u.age is not None)
        np.testing.assert_allclose(
            demo[cid].age_quartiles, np.percentile(ages, [0, 25, 50, 75, 100]), atol=1e-12
        )
        nf = sum(1 for u in members if u.gender == "f")
        nm = sum(1 for u in members if u.gender == "m")
        assert demo[cid].female_male_ratio == pytest.approx(nf / nm)
        n_events = sum(1 for e in ds.events if ds.users[e.user_id].country in countries)
        assert demo[cid].mean_playcount_per_user == pytest.approx(n_events / len(members))


def test_profiles_deterministic():
    ds, assignment = _two_cluster_fixture()
    stats = compute_idf(ds)
    a = cluster_top_tracks(ds, assignment, stats, k=10, idf_threshold=0.0)
    b = cluster_top_tracks(ds, assignment, stats, k=10, idf_threshold=0.0)
    assert a == b


def test_genre_tags_aggregated_by_playcount(tmp_path):
    users = {0: UserRecord(0, country="AA")}
    rows = [(0, 1)] * 4 + [(0, 2)] * 6
    ds = _dataset(rows, users)
    assignment = ClusterAssignment(labels=np.zeros(1, dtype=np.int64), n_clusters=1)
    stats = compute_idf(ds)
    p = tmp_path / "tags.tsv"
    p.write_text("1\trock, pop\n2\trock\nnotanid\tjazz\n")
    tags = parse_tags(p)
    assert tags == {1: ["rock", "pop"], 2: ["rock"]}
    profiles = cluster_top_tracks(ds, assignment, stats, k=5, idf_threshold=0.0, tags=tags)
    assert profiles[0].genre_counts == {"pop": 4, "rock": 10}


def test_assignment_must_cover_countries():
    ds, _ = _two_cluster_fixture()
    bad = ClusterAssignment(labels=np.zeros(1, dtype=np.int64), n_clusters=1)
    with pytest.raises(ValueError, match="covers"):
        cluster_top_tracks(ds, bad, compute_idf(ds), k=3)
