"""Split protocol, metric aggregation, and the subset robustness study.

Users are partitioned into disjoint train, validation, and test groups.
Each evaluation user's events are split at the event level: a seeded
80/20 draw feeds the input side to the models and keeps the holdout
side for scoring. Tracks that remain in the input after the draw are
known history, so they are removed from the holdout set; users left
with nothing to predict are excluded from metric averages, as are users
with fewer than five events (their events all stay on the input side).

Aggregation produces per-user metric arrays, their means, and paired
significance tests against a designated baseline, written to a CSV with
one row per model, metric, and cutoff.
"""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import Dataset, FilterConfig, ListeningEvent, UserRecord, apply_filters
from .metrics import ndcg_at_k, precision_at_k, recall_at_k, wilcoxon_signed_rank

METRIC_NAMES = ("precision", "recall", "ndcg")

_METRIC_FNS = {"precision": precision_at_k, "recall": recall_at_k, "ndcg": ndcg_at_k}

MIN_EVENTS_FOR_SPLIT = 5


@dataclass(frozen=True)
class SplitSpec:
    n_val_users: int
    n_test_users: int
    holdout_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_val_users < 0 or self.n_test_users < 0:
            raise ValueError("user counts must be nonnegative")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class EvalGroup:
    user_ids: tuple[int, ...]
    input_counts: np.ndarray  # (n_users, n_tracks)
    holdout: tuple[frozenset[int], ...]  # empty set = excluded from averaging


@dataclass(frozen=True)
class Splits:
    train_user_ids: tuple[int, ...]
    train_counts: np.ndarray
    val: EvalGroup
    test: EvalGroup


def make_splits(dataset: Dataset, spec: SplitSpec) -> Splits:
    """Seeded user-disjoint split with per-user event holdouts."""
    user_ids = sorted(dataset.users)
    if spec.n_val_users + spec.n_test_users >= len(user_ids):
        raise ValueError(
            f"cannot hold out {spec.n_val_users}+{spec.n_test_users} of {len(user_ids)} users"
        )
    rng = np.random.default_rng(spec.seed)
    shuffled = [user_ids[i] for i in rng.permutation(len(user_ids))]
    val_ids = tuple(sorted(shuffled[: spec.n_val_users]))
    test_ids = tuple(sorted(shuffled[spec.n_val_users : spec.n_val_users + spec.n_test_users]))
    train_ids = tuple(sorted(shuffled[spec.n_val_users + spec.n_test_users :]))

    tracks_by_user: dict[int, list[int]] = {uid: [] for uid in user_ids}
    tidx = dataset.track_index
    for e in dataset.events:
        tracks_by_user[e.user_id].append(tidx[e.track_id])

    train_counts = np.zeros((len(train_ids), dataset.n_tracks), dtype=np.float64)
    for row, uid in enumerate(train_ids):
        for t in tracks_by_user[uid]:
            train_counts[row, t] += 1.0

    def split_group(ids: tuple[int, ...]) -> EvalGroup:
        counts = np.zeros((len(ids), dataset.n_tracks), dtype=np.float64)
        holdouts: list[frozenset[int]] = []
        for row, uid in enumerate(ids):
            tracks = tracks_by_user[uid]
            n = len(tracks)
            n_hold = math.floor(spec.holdout_fraction * n) if n >= MIN_EVENTS_FOR_SPLIT else 0
            held_pos = set(rng.choice(n, size=n_hold, replace=False).tolist())
            held_tracks = set()
            for pos, t in enumerate(tracks):
                if pos in held_pos:
                    held_tracks.add(t)
                else:
                    counts[row, t] += 1.0
            # tracks still present on the input side are known history
            holdouts.append(frozenset(t for t in held_tracks if counts[row, t] == 0))
        return EvalGroup(user_ids=ids, input_counts=counts, holdout=tuple(holdouts))

    return Splits(
        train_user_ids=train_ids,
        train_counts=train_counts,
        val=split_group(val_ids),
        test=split_group(test_ids),
    )


SPLITS_FILE = "splits.json"


def save_splits(out_dir, splits: Splits) -> None:
    """Persist a split as JSON; counts are stored sparsely per user."""

    def group_payload(group: EvalGroup) -> list[dict]:
        rows = []
        for i, uid in enumerate(group.user_ids):
            nz = np.flatnonzero(group.input_counts[i])
            rows.append(
                {
                    "user": int(uid),
                    "input": {str(int(t)): int(group.input_counts[i, t]) for t in nz},
                    "holdout": sorted(int(t) for t in group.holdout[i]),
                }
            )
        return rows

    payload = {
        "n_tracks": int(splits.train_counts.shape[1]),
        "train_user_ids": [int(u) for u in splits.train_user_ids],
        "val": group_payload(splits.val),
        "test": group_payload(splits.test),
    }
    path = Path(out_dir) / SPLITS_FILE
    path.write_text(json.dumps(payload, sort_keys=True) + "\n")


def load_splits(in_dir, dataset: Dataset) -> Splits:
    """Rebuild a persisted split; train counts are recounted from the
    dataset, which is exact because the split stores user ids only."""
    payload = json.loads((Path(in_dir) / SPLITS_FILE).read_text())
    n_tracks = payload["n_tracks"]
    if n_tracks != dataset.n_tracks:
        raise ValueError(f"split was made for {n_tracks} tracks, dataset has {dataset.n_tracks}")
    train_ids = tuple(payload["train_user_ids"])
    tidx = dataset.track_index
    row_of = {uid: i for i, uid in enumerate(train_ids)}
    train_counts = np.zeros((len(train_ids), n_tracks), dtype=np.float64)
    for e in dataset.events:
        row = row_of.get(e.user_id)
        if row is not None:
            train_counts[row, tidx[e.track_id]] += 1.0

    def group_from(rows: list[dict]) -> EvalGroup:
        ids = tuple(r["user"] for r in rows)
        counts = np.zeros((len(rows), n_tracks), dtype=np.float64)
        holdouts = []
        for i, r in enumerate(rows):
            for t, c in r["input"].items():
                counts[i, int(t)] = float(c)
            holdouts.append(frozenset(r["holdout"]))
        return EvalGroup(user_ids=ids, input_counts=counts, holdout=tuple(holdouts))

    return Splits(
        train_user_ids=train_ids,
        train_counts=train_counts,
        val=group_from(payload["val"]),
        test=group_from(payload["test"]),
    )


@dataclass
class MetricResult:
    per_user: dict[tuple[str, int], np.ndarray]
    means: dict[tuple[str, int], float]
    n_scored: int
    p_vs_baseline: dict[tuple[str, int], float] | None = None


def evaluate_rankings(
    recommendations: Sequence[Sequence[int]],
    holdouts: Sequence[Iterable[int]],
    ks: tuple[int, ...] = (10, 100),
) -> MetricResult:
    """Score ranked lists against holdout sets at every cutoff.

    Users with an empty holdout are skipped, so per-user arrays line up
    across models evaluated on the same split.
    """
    if len(recommendations) != len(holdouts):
        raise ValueError("one recommendation list required per holdout set")
    scored = [i for i, h in enumerate(holdouts) if h]
    per_user: dict[tuple[str, int], np.ndarray] = {}
    means: dict[tuple[str, int], float] = {}
    for name in METRIC_NAMES:
        fn = _METRIC_FNS[name]
        for k in ks:
            vals = np.array([fn(recommendations[i], holdouts[i], k) for i in scored])
            per_user[(name, k)] = vals
            means[(name, k)] = float(vals.mean()) if scored else 0.0
    return MetricResult(per_user=per_user, means=means, n_scored=len(scored))


def compare_to_baseline(result: MetricResult, baseline: MetricResult) -> dict[tuple[str, int], float]:
    """Paired two-sided signed-rank p-values for every metric and cutoff."""
    if result.n_scored != baseline.n_scored:
        raise ValueError("paired comparison requires the same scored users")
    return {
        key: wilcoxon_signed_rank(result.per_user[key], baseline.per_user[key])
        for key in result.per_user
    }


def write_results_csv(
    path,
    results: Mapping[str, MetricResult],
    ks: tuple[int, ...] = (10, 100),
) -> None:
    """One row per model, metric, and cutoff; stable order and format."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "metric", "K", "mean", "p_vs_baseline"])
        for model, res in results.items():
            for name in METRIC_NAMES:
                for k in ks:
                    p = "" if res.p_vs_baseline is None else f"{res.p_vs_baseline[(name, k)]:.12g}"
                    writer.writerow([model, name, k, f"{res.means[(name, k)]:.12g}", p])


@dataclass
class SubsetReport:
    per_run: list[dict[tuple[str, int], float]]
    mean: dict[tuple[str, int], float]


def sampled_subset_experiment(
    events: Sequence[ListeningEvent],
    users: Mapping[int, UserRecord],
    filter_cfg: FilterConfig,
    subset_size: int,
    runner: Callable[[Dataset], MetricResult],
    n_samples: int = 3,
    seed: int = 0,
) -> SubsetReport:
    """Retrain and evaluate on random track subsets of a wider universe.

    The universe is whatever survives filter_cfg (typically a lowered
    playcount threshold). Each run keeps only the events of
    subset_size sampled tracks, re-applies the filters, and hands the
    rebuilt dataset to the runner; per-run means and their average come
    back. Sampling the whole universe reproduces the unsampled run.
    """
    universe = apply_filters(events, users, filter_cfg)
    track_ids = sorted(universe.track_index)
    if subset_size > len(track_ids):
        raise ValueError(f"cannot sample {subset_size} of {len(track_ids)} tracks")
    if subset_size < 1 or n_samples < 1:
        raise ValueError("subset_size and n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    per_run: list[dict[tuple[str, int], float]] = []
    for _ in range(n_samples):
        keep = set(np.asarray(track_ids)[rng.choice(len(track_ids), size=subset_size, replace=False)].tolist())
        restricted = [e for e in events if e.track_id in keep]
        per_run.append(runner(apply_filters(restricted, users, filter_cfg)).means)
    mean = {key: float(np.mean([run[key] for run in per_run])) for key in per_run[0]}
    return SubsetReport(per_run=per_run, mean=mean)
