"""Command-line pipeline from listening logs to evaluated recommenders.

Subcommands cover every stage: synthetic data generation, ingestion and
filtering, country features, 2-D embedding, density clustering,
archetype reports, context models, evaluation splits, model training,
per-user recommendation, metric evaluation, and an end-to-end
`reproduce` run on synthetic data.

Artifacts live under a root directory (``--root`` or the GEOREC_ROOT
environment variable), one subdirectory per stage. Each stage writes a
manifest recording its parameters, input hashes, and outputs; a rerun
whose manifest still matches is skipped, so interrupted pipelines
resume where they stopped and produce byte-identical artifacts.

Settings resolve in three layers: built-in defaults, then a flat
``key = value`` config file (``--config``), then explicit flags. All
randomness flows from the single root seed; every stage derives its own
seed by hashing its name together with that root seed, so a stage's
output never depends on which other stages ran.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

ROOT_ENV = "GEOREC_ROOT"

DEFAULT_ROOT = "georec-run"

# Pinned before numpy loads; numpy reads them only at import time.
THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)

DATASET_FILES = ("events.tsv", "users.tsv", "track_index.txt", "country_index.txt", "filter_counts.json")

CONTEXT_CHOICES = ("country-id", "cluster-id", "cluster-dist", "country-dist")

CONTEXT_KIND = {
    "country-id": "country_onehot",
    "cluster-id": "cluster_onehot",
    "cluster-dist": "cluster_dist",
    "country-dist": "country_dist",
}

MODEL_NAMES = (
    "mp-global",
    "mp-country",
    "mp-cluster",
    "imf",
    "vae",
    "vae-country-id",
    "vae-cluster-id",
    "vae-cluster-dist",
    "vae-country-dist",
)

BASELINE_MODEL = "vae"

GRID_PERPLEXITIES = (1, 2, 3, 5, 10, 15, 20, 25, 30, 35, 40, 50)
GRID_MIN_SIZES = (2, 3, 4, 5)

DEFAULTS = {
    "seed": "0",
    "threads": "0",
    "events": "",
    "users": "",
    "tags": "",
    "min_track_plays": "1000",
    "min_country_les": "80000",
    "min_country_users": "25",
    "countries": "45",
    "users_per_country": "44",
    "tracks": "3000",
    "archetypes": "9",
    "skew": "0.9",
    "events_per_user": "120",
    "global_hits": "0",
    "pca_dims": "100",
    "perplexity": "5",
    "iters": "1000",
    "min_size": "3",
    "xi": "0.05",
    "idf_threshold": "4.2",
    "top_k": "10",
    "val_fraction": "0.1",
    "test_fraction": "0.1",
    "holdout_fraction": "0.2",
    "hidden": "1200",
    "latent": "600",
    "epochs": "50",
    "batch_size": "500",
    "kl_weight": "0.2",
    "dropout": "0.5",
    "learning_rate": "0.001",
    "imf_dims": "128",
    "imf_epochs": "30",
    "imf_learning_rate": "0.05",
    "imf_regularization": "0.01",
    "imf_batch_size": "1024",
    "ks": "10,100",
}

# reproduce runs the whole pipeline twice as often as anything else, so
# its defaults are sized for a fast desk check rather than a full study
REPRODUCE_SCALE = {
    "countries": "12",
    "users_per_country": "10",
    "tracks": "300",
    "archetypes": "4",
    "skew": "0.85",
    "events_per_user": "80",
    "min_track_plays": "1",
    "min_country_les": "1",
    "min_country_users": "1",
    "pca_dims": "30",
    "iters": "300",
    "idf_threshold": "1.5",
    "hidden": "64",
    "latent": "32",
    "epochs": "10",
    "batch_size": "64",
    "imf_dims": "16",
    "imf_epochs": "10",
    "test_fraction": "0.2",
}


class PipelineError(RuntimeError):
    """Stage failure; carries the stage name for the exit message."""

    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def _guard(stage: str, fn, *args, **kwargs):
    """Run one stage, converting any failure into a named stage error."""
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(stage, f"{type(exc).__name__}: {exc}") from exc


@dataclass(frozen=True)
class PipelineConfig:
    """Every stage parameter plus the artifact root and the root seed."""

    root: Path
    seed: int
    events: str | None
    users: str | None
    tags: str | None
    min_track_plays: int
    min_country_les: int
    min_country_users: int
    countries: int
    users_per_country: int
    tracks: int
    archetype_count: int
    skew: float
    events_per_user: int
    global_hits: int
    pca_dims: int
    perplexity: float
    iters: int
    min_size: int
    xi: float
    idf_threshold: float
    top_k: int
    val_fraction: float
    test_fraction: float
    holdout_fraction: float
    hidden: int
    latent: int
    epochs: int
    batch_size: int
    kl_weight: float
    dropout: float
    learning_rate: float
    imf_dims: int
    imf_epochs: int
    imf_learning_rate: float
    imf_regularization: float
    imf_batch_size: int
    ks: tuple[int, ...]


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    from .artifacts import parse_config

    values = dict(DEFAULTS)
    if args.command == "reproduce":
        values.update(REPRODUCE_SCALE)
    config_path = getattr(args, "config", None)
    if config_path:
        if not Path(config_path).is_file():
            raise PipelineError(args.command, f"config file not found: {config_path}")
        for key, val in parse_config(config_path).items():
            values[key.replace("-", "_")] = val

    def pick(name: str, cast):
        flag = getattr(args, name, None)
        return cast(values[name]) if flag is None else flag

    root = getattr(args, "root", None) or os.environ.get(ROOT_ENV) or DEFAULT_ROOT
    return PipelineConfig(
        root=Path(root),
        seed=pick("seed", int),
        events=pick("events", str) or None,
        users=pick("users", str) or None,
        tags=pick("tags", str) or None,
        min_track_plays=pick("min_track_plays", int),
        min_country_les=pick("min_country_les", int),
        min_country_users=pick("min_country_users", int),
        countries=pick("countries", int),
        users_per_country=pick("users_per_country", int),
        tracks=pick("tracks", int),
        archetype_count=pick("archetypes", int),
        skew=pick("skew", float),
        events_per_user=pick("events_per_user", int),
        global_hits=pick("global_hits", int),
        pca_dims=pick("pca_dims", int),
        perplexity=pick("perplexity", float),
        iters=pick("iters", int),
        min_size=pick("min_size", int),
        xi=pick("xi", float),
        idf_threshold=pick("idf_threshold", float),
        top_k=pick("top_k", int),
        val_fraction=pick("val_fraction", float),
        test_fraction=pick("test_fraction", float),
        holdout_fraction=pick("holdout_fraction", float),
        hidden=pick("hidden", int),
        latent=pick("latent", int),
        epochs=pick("epochs", int),
        batch_size=pick("batch_size", int),
        kl_weight=pick("kl_weight", float),
        dropout=pick("dropout", float),
        learning_rate=pick("learning_rate", float),
        imf_dims=pick("imf_dims", int),
        imf_epochs=pick("imf_epochs", int),
        imf_learning_rate=pick("imf_learning_rate", float),
        imf_regularization=pick("imf_regularization", float),
        imf_batch_size=pick("imf_batch_size", int),
        ks=tuple(int(p) for p in str(pick("ks", str)).replace(" ", "").split(",") if p),
    )


# ---------------------------------------------------------------------------
# shared stage plumbing


def _require(stage: str, paths) -> None:
    for p in paths:
        if not Path(p).is_file():
            raise PipelineError(stage, f"missing input: {p}")


def _dataset_paths(dataset_dir: Path) -> list[str]:
    return [str(dataset_dir / name) for name in DATASET_FILES]


def _skip(stage_dir: Path, stage: str, params, inputs) -> bool:
    from .artifacts import manifest_matches

    if manifest_matches(stage_dir, stage, params, inputs):
        print(f"[{stage}] up to date: {stage_dir}")
        return True
    return False


def _load_ds(stage: str, dataset_dir: Path):
    from .artifacts import load_dataset

    _require(stage, _dataset_paths(dataset_dir))
    return load_dataset(dataset_dir)


def _load_assignment(stage: str, cluster_dir: Path, dataset):
    import numpy as np

    from .artifacts import read_labels
    from .cluster import ClusterAssignment

    _require(stage, [cluster_dir / "labels.tsv"])
    label_of = read_labels(cluster_dir / "labels.tsv")
    codes = sorted(dataset.country_index, key=dataset.country_index.get)
    missing = [c for c in codes if c not in label_of]
    if missing:
        raise PipelineError(stage, f"cluster labels missing countries: {missing}")
    labels = np.array([label_of[c] for c in codes], dtype=np.int64)
    n_clusters = int(labels.max()) + 1 if (labels >= 0).any() else 0
    return ClusterAssignment(labels=labels, n_clusters=n_clusters)


def _all_noise_assignment(dataset):
    import numpy as np

    from .cluster import ClusterAssignment

    return ClusterAssignment(labels=np.full(dataset.n_countries, -1, dtype=np.int64), n_clusters=0)


def _country_rows(dataset, user_ids):
    import numpy as np

    cidx, users = dataset.country_index, dataset.users
    return np.array([cidx[users[u].country] for u in user_ids], dtype=np.int64)


# ---------------------------------------------------------------------------
# stages


def stage_synth(cfg: PipelineConfig, out_dir: Path) -> None:
    from .artifacts import stage_seed, write_events_tsv, write_labels, write_manifest, write_users_tsv
    from .ingest import generate_synthetic

    params = {
        "countries": cfg.countries,
        "users_per_country": cfg.users_per_country,
        "tracks": cfg.tracks,
        "archetypes": cfg.archetype_count,
        "skew": cfg.skew,
        "events_per_user": cfg.events_per_user,
        "global_hits": cfg.global_hits,
        "seed": stage_seed(cfg.seed, "synth"),
    }
    if _skip(out_dir, "synth", params, []):
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    events, users, planted = generate_synthetic(
        n_countries=cfg.countries,
        users_per_country=cfg.users_per_country,
        n_tracks=cfg.tracks,
        archetype_count=cfg.archetype_count,
        skew=cfg.skew,
        seed=params["seed"],
        events_per_user=cfg.events_per_user,
        global_hits=cfg.global_hits,
    )
    write_events_tsv(out_dir / "events.tsv", events)
    write_users_tsv(out_dir / "users.tsv", users)
    write_labels(out_dir / "planted.tsv", planted)
    write_manifest(out_dir, "synth", params, [], ["events.tsv", "users.tsv", "planted.tsv"])
    print(f"[synth] {out_dir}")


def stage_ingest(cfg: PipelineConfig, events_path: Path, users_path: Path, out_dir: Path) -> None:
    from .artifacts import save_dataset, write_manifest
    from .ingest import FilterConfig, apply_filters, parse_events, parse_users

    if not Path(events_path).is_file():
        raise PipelineError("ingest", f"events file not found: {events_path}")
    if not Path(users_path).is_file():
        raise PipelineError("ingest", f"users file not found: {users_path}")
    params = {
        "min_track_plays": cfg.min_track_plays,
        "min_country_les": cfg.min_country_les,
        "min_country_users": cfg.min_country_users,
    }
    inputs = [str(events_path), str(users_path)]
    if _skip(out_dir, "ingest", params, inputs):
        return
    events, _ = parse_events(events_path)
    users, _ = parse_users(users_path)
    dataset = apply_filters(
        events,
        users,
        FilterConfig(cfg.min_track_plays, cfg.min_country_les, cfg.min_country_users),
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = save_dataset(out_dir, dataset)
    write_manifest(out_dir, "ingest", params, inputs, outputs)
    print(f"[ingest] {len(dataset.events)} events, {dataset.n_users} users, "
          f"{dataset.n_tracks} tracks, {dataset.n_countries} countries -> {out_dir}")


def stage_features(cfg: PipelineConfig, dataset_dir: Path, out_dir: Path) -> None:
    from .artifacts import write_index, write_manifest, write_matrix
    from .countrymap import build_matrix, pca_reduce

    params = {"pca_dims": cfg.pca_dims}
    inputs = _dataset_paths(dataset_dir)
    _require("features", inputs)
    if _skip(out_dir, "features", params, inputs):
        return
    dataset = _load_ds("features", dataset_dir)
    matrix = build_matrix(dataset)
    reduced = pca_reduce(matrix, cfg.pca_dims)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_matrix(out_dir / "features.txt", reduced.projected)
    write_index(out_dir / "countries.txt", matrix.row_countries)
    write_matrix(out_dir / "variance.txt", reduced.explained_variance_ratio)
    write_manifest(out_dir, "features", params, inputs, ["features.txt", "countries.txt", "variance.txt"])
    print(f"[features] {reduced.projected.shape[0]} countries x {reduced.projected.shape[1]} dims -> {out_dir}")


def stage_embed(cfg: PipelineConfig, features_dir: Path, out_dir: Path, svg_name: str | None) -> None:
    from .artifacts import read_index, read_matrix, stage_seed, write_index, write_manifest, write_matrix
    from .embed import TsneConfig, tsne_run
    from .plots import scatter_svg, write_svg

    inputs = [str(features_dir / "features.txt"), str(features_dir / "countries.txt")]
    params = {
        "perplexity": cfg.perplexity,
        "iters": cfg.iters,
        "seed": stage_seed(cfg.seed, "embed"),
        "svg": svg_name or "",
    }
    _require("embed", inputs)
    if _skip(out_dir, "embed", params, inputs):
        return
    features = read_matrix(features_dir / "features.txt")
    codes = read_index(features_dir / "countries.txt")
    result = tsne_run(features, TsneConfig(perplexity=cfg.perplexity, iterations=cfg.iters, seed=params["seed"]))
    out_dir.mkdir(parents=True, exist_ok=True)
    write_matrix(out_dir / "coords.txt", result.coords)
    write_index(out_dir / "countries.txt", codes)
    write_matrix(out_dir / "kl_trace.txt", result.kl_trace)
    outputs = ["coords.txt", "countries.txt", "kl_trace.txt"]
    if svg_name:
        write_svg(out_dir / svg_name, scatter_svg(result.coords, codes, title="country embedding"))
        outputs.append(svg_name)
    write_manifest(out_dir, "embed", params, inputs, outputs)
    print(f"[embed] final KL {result.final_kl:.6f} -> {out_dir}")


def embed_grid(cfg: PipelineConfig, features_dir: Path, out_dir: Path) -> None:
    """Scan perplexity and cluster size, scoring neighborhood preservation."""
    from .artifacts import read_matrix, stage_seed
    from .cluster import OpticsConfig, cluster_points
    from .embed import TsneConfig, neighborhood_preservation, tsne_run

    inputs = [features_dir / "features.txt", features_dir / "countries.txt"]
    _require("embed", inputs)
    features = read_matrix(features_dir / "features.txt")
    n = features.shape[0]
    seed = stage_seed(cfg.seed, "embed")
    rows = []
    for perplexity in GRID_PERPLEXITIES:
        if perplexity >= n:
            continue
        result = tsne_run(features, TsneConfig(perplexity=perplexity, iterations=cfg.iters, seed=seed))
        preservation = neighborhood_preservation(features, result.coords)
        for min_size in GRID_MIN_SIZES:
            if min_size > n:
                continue
            _, assignment = cluster_points(result.coords, OpticsConfig(min_cluster_size=min_size, xi=cfg.xi))
            rows.append((perplexity, min_size, preservation, assignment.n_clusters))
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "grid.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["perplexity", "min_size", "preservation", "n_clusters"])
        for perplexity, min_size, preservation, n_clusters in rows:
            writer.writerow([perplexity, min_size, f"{preservation:.12g}", n_clusters])
    best = max(rows, key=lambda r: r[2])
    print(f"[embed] grid of {len(rows)} settings -> {out_dir / 'grid.csv'}")
    print(f"[embed] best preservation {best[2]:.4f} at perplexity {best[0]}, min-size {best[1]}")


def stage_cluster(cfg: PipelineConfig, embed_dir: Path, out_dir: Path, svg_name: str | None) -> None:
    from .artifacts import read_index, read_matrix, write_index, write_labels, write_manifest, write_matrix
    from .cluster import OpticsConfig, cluster_points
    from .plots import reachability_svg, write_svg

    inputs = [str(embed_dir / "coords.txt"), str(embed_dir / "countries.txt")]
    params = {"min_size": cfg.min_size, "xi": cfg.xi, "svg": svg_name or ""}
    _require("cluster", inputs)
    if _skip(out_dir, "cluster", params, inputs):
        return
    coords = read_matrix(embed_dir / "coords.txt")
    codes = read_index(embed_dir / "countries.txt")
    ordering, assignment = cluster_points(coords, OpticsConfig(min_cluster_size=cfg.min_size, xi=cfg.xi))
    out_dir.mkdir(parents=True, exist_ok=True)
    write_labels(out_dir / "labels.tsv", {c: int(l) for c, l in zip(codes, assignment.labels)})
    write_index(out_dir / "ordering.txt", [int(i) for i in ordering.order])
    write_matrix(out_dir / "reachability.txt", ordering.reachability)
    outputs = ["labels.tsv", "ordering.txt", "reachability.txt"]
    if svg_name:
        plot = reachability_svg(
            ordering.reachability[ordering.order],
            labels=[int(assignment.labels[p]) for p in ordering.order],
            title="reachability ordering",
        )
        write_svg(out_dir / svg_name, plot)
        outputs.append(svg_name)
    write_manifest(out_dir, "cluster", params, inputs, outputs)
    noise = int((assignment.labels < 0).sum())
    print(f"[cluster] {assignment.n_clusters} clusters, {noise} noise countries -> {out_dir}")


def stage_archetypes(cfg: PipelineConfig, root: Path, report_path: Path) -> None:
    from .archetypes import cluster_top_tracks, compute_idf, parse_tags
    from .artifacts import write_manifest

    dataset_dir, cluster_dir = root / "ingest", root / "cluster"
    inputs = _dataset_paths(dataset_dir) + [str(cluster_dir / "labels.tsv")]
    if cfg.tags:
        _require("archetypes", [cfg.tags])
        inputs.append(str(cfg.tags))
    params = {"idf_threshold": cfg.idf_threshold, "top_k": cfg.top_k, "tags": bool(cfg.tags)}
    _require("archetypes", inputs)
    out_dir = report_path.parent
    if _skip(out_dir, "archetypes", params, inputs):
        return
    dataset = _load_ds("archetypes", dataset_dir)
    assignment = _load_assignment("archetypes", cluster_dir, dataset)
    stats = compute_idf(dataset)
    tags = parse_tags(cfg.tags) if cfg.tags else None
    profiles = cluster_top_tracks(
        dataset, assignment, stats, k=cfg.top_k, idf_threshold=cfg.idf_threshold, tags=tags
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(report_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cluster_id", "rank", "track_id", "playcount", "idf", "tags"])
        for profile in profiles:
            for rank, (track, plays) in enumerate(profile.top_tracks, start=1):
                track_tags = ";".join(tags.get(track, [])) if tags else ""
                writer.writerow(
                    [profile.cluster_id, rank, track, plays, f"{stats.idf[track]:.12g}", track_tags]
                )
    with open(out_dir / "demographics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["cluster_id", "age_min", "age_q1", "age_median", "age_q3", "age_max",
             "female_male_ratio", "mean_playcount_per_user", "top_genres"]
        )
        for profile in profiles:
            genres = sorted(profile.genre_counts.items(), key=lambda kv: (-kv[1], kv[0]))[:5]
            writer.writerow(
                [profile.cluster_id]
                + [f"{q:.12g}" for q in profile.age_quartiles]
                + [f"{profile.female_male_ratio:.12g}", f"{profile.mean_playcount_per_user:.12g}"]
                + [";".join(f"{name}:{count}" for name, count in genres)]
            )
    write_manifest(out_dir, "archetypes", params, inputs, [report_path.name, "demographics.csv"])
    print(f"[archetypes] {len(profiles)} cluster reports -> {report_path}")


def stage_context_one(cfg: PipelineConfig, root: Path, flag: str, out_dir: Path) -> None:
    from .artifacts import write_index, write_manifest, write_matrix
    from .context import build_context, compute_centroids

    kind = CONTEXT_KIND[flag]
    dataset_dir, cluster_dir = root / "ingest", root / "cluster"
    inputs = _dataset_paths(dataset_dir) + [str(cluster_dir / "labels.tsv")]
    params = {"model": flag}
    _require("context", inputs)
    if _skip(out_dir, "context", params, inputs):
        return
    dataset = _load_ds("context", dataset_dir)
    assignment = _load_assignment("context", cluster_dir, dataset)
    centroid_kind = {"cluster_dist": "cluster", "country_dist": "country"}.get(kind)
    centroids = compute_centroids(dataset, assignment, centroid_kind) if centroid_kind else None
    model = build_context(dataset, assignment, centroids, kind)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_matrix(out_dir / "context.txt", model.vectors)
    write_index(out_dir / "users.txt", model.user_ids)
    outputs = ["context.txt", "users.txt", "meta.json"]
    if centroids is not None:
        write_matrix(out_dir / "centroids.txt", centroids.vectors)
        outputs.append("centroids.txt")
    meta = {
        "kind": kind,
        "width": int(model.vectors.shape[1]),
        "has_noise_row": bool(centroids.has_noise_row) if centroids else False,
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    write_manifest(out_dir, "context", params, inputs, sorted(outputs))
    print(f"[context] {flag}: width {meta['width']} -> {out_dir}")


def stage_splits(cfg: PipelineConfig, dataset_dir: Path, out_dir: Path) -> None:
    from .artifacts import stage_seed, write_manifest
    from .evaluation import SplitSpec, make_splits, save_splits

    inputs = _dataset_paths(dataset_dir)
    params = {
        "val_fraction": cfg.val_fraction,
        "test_fraction": cfg.test_fraction,
        "holdout_fraction": cfg.holdout_fraction,
        "seed": stage_seed(cfg.seed, "splits"),
    }
    _require("splits", inputs)
    if _skip(out_dir, "splits", params, inputs):
        return
    dataset = _load_ds("splits", dataset_dir)
    n_val = max(1, int(dataset.n_users * cfg.val_fraction))
    n_test = max(1, int(dataset.n_users * cfg.test_fraction))
    splits = make_splits(dataset, SplitSpec(n_val, n_test, cfg.holdout_fraction, seed=params["seed"]))
    out_dir.mkdir(parents=True, exist_ok=True)
    save_splits(out_dir, splits)
    write_manifest(out_dir, "splits", params, inputs, ["splits.json"])
    print(f"[splits] {len(splits.train_user_ids)} train / {n_val} val / {n_test} test users -> {out_dir}")


def _model_parts(name: str) -> tuple[str, str | None, str | None]:
    """Split a canonical model name into (type, mp scope, context flag)."""
    if name.startswith("mp-"):
        scope = name[3:]
        if scope not in ("global", "country", "cluster"):
            raise ValueError(f"unknown MP scope in model name {name!r}")
        return "mp", scope, None
    if name == "imf":
        return "imf", None, None
    if name == "vae":
        return "vae", None, None
    if name.startswith("vae-") and name[4:] in CONTEXT_CHOICES:
        return "vae", None, name[4:]
    raise ValueError(f"unknown model name {name!r}")


def stage_train_one(cfg: PipelineConfig, root: Path, name: str, out_dir: Path) -> None:
    from dataclasses import asdict

    import numpy as np

    from .artifacts import stage_seed, write_manifest, write_weights
    from .context import compute_centroids, context_for_counts
    from .evaluation import load_splits
    from .recsys import ImfConfig, VaeConfig, imf_train, mp_train, train

    model_type, scope, flag = _model_parts(name)
    dataset_dir, splits_dir, cluster_dir = root / "ingest", root / "splits", root / "cluster"
    stage = f"train:{name}"
    inputs = _dataset_paths(dataset_dir) + [str(splits_dir / "splits.json")]
    # only cluster-aware models depend on the clustering artifact; the
    # country one-hot and country-distance contexts read the dataset alone
    needs_labels = (model_type == "mp" and scope == "cluster") or flag in ("cluster-id", "cluster-dist")
    if needs_labels:
        inputs.append(str(cluster_dir / "labels.tsv"))
    seed = stage_seed(cfg.seed, stage)
    if model_type == "mp":
        params = {"model": name, "scope": scope}
    elif model_type == "imf":
        params = {
            "model": name,
            "dims": cfg.imf_dims,
            "epochs": cfg.imf_epochs,
            "learning_rate": cfg.imf_learning_rate,
            "regularization": cfg.imf_regularization,
            "batch_size": cfg.imf_batch_size,
            "seed": seed,
        }
    else:
        params = {
            "model": name,
            "context": flag or "none",
            "hidden": cfg.hidden,
            "latent": cfg.latent,
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "kl_weight": cfg.kl_weight,
            "dropout": cfg.dropout,
            "learning_rate": cfg.learning_rate,
            "seed": seed,
        }
    _require(stage, inputs)
    if _skip(out_dir, stage, params, inputs):
        return
    dataset = _load_ds(stage, dataset_dir)
    splits = load_splits(splits_dir, dataset)
    assignment = (
        _load_assignment(stage, cluster_dir, dataset) if needs_labels else _all_noise_assignment(dataset)
    )

    if model_type == "mp":
        groups = None
        if scope != "global":
            train_countries = _country_rows(dataset, splits.train_user_ids)
            groups = train_countries if scope == "country" else assignment.labels[train_countries]
        model = mp_train(splits.train_counts, scope, groups)
        arrays = {"global_ranking": model.global_ranking.astype(np.float64)}
        for key, ranking in model.ranked.items():
            arrays[f"rank_{key}"] = ranking.astype(np.float64)
        meta = {"type": "mp", "scope": scope, "keys": [str(k) for k in sorted(model.ranked)]}
        note = f"{len(model.ranked)} rankings"
    elif model_type == "imf":
        imf_cfg = ImfConfig(
            dims=cfg.imf_dims,
            epochs=cfg.imf_epochs,
            learning_rate=cfg.imf_learning_rate,
            regularization=cfg.imf_regularization,
            batch_size=cfg.imf_batch_size,
            seed=seed,
        )
        model = imf_train(splits.train_counts, imf_cfg)
        arrays = {
            "user_factors": model.user_factors,
            "item_factors": model.item_factors,
            "item_popularity": model.item_popularity,
        }
        meta = {"type": "imf", "config": asdict(imf_cfg)}
        note = f"{imf_cfg.dims} dims, {imf_cfg.epochs} epochs"
    else:
        vae_cfg = VaeConfig(
            hidden=cfg.hidden,
            latent=cfg.latent,
            kl_weight=cfg.kl_weight,
            dropout=cfg.dropout,
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate,
            seed=seed,
        )
        centroids, train_context, val_context = None, None, None
        kind = CONTEXT_KIND[flag] if flag else None
        if kind:
            centroid_kind = {"cluster_dist": "cluster", "country_dist": "country"}.get(kind)
            centroids = compute_centroids(dataset, assignment, centroid_kind) if centroid_kind else None
            train_countries = _country_rows(dataset, splits.train_user_ids)
            val_countries = _country_rows(dataset, splits.val.user_ids)
            train_context = context_for_counts(splits.train_counts, train_countries, assignment, centroids, kind)
            val_context = context_for_counts(splits.val.input_counts, val_countries, assignment, centroids, kind)
        model, report = train(
            splits.train_counts,
            train_context,
            vae_cfg,
            val_input=splits.val.input_counts,
            val_holdout=[set(h) for h in splits.val.holdout],
            val_context=val_context,
        )
        arrays = dict(model.weights)
        meta = {
            "type": "vae",
            "context": flag or "none",
            "n_context": model.n_context,
            "config": asdict(vae_cfg),
            "best_epoch": report.best_epoch,
            "centroid_kind": None,
            "has_noise_row": False,
        }
        if centroids is not None:
            arrays["centroids"] = centroids.vectors
            meta["centroid_kind"] = centroids.kind
            meta["has_noise_row"] = bool(centroids.has_noise_row)
        note = f"best epoch {report.best_epoch}"
    out_dir.mkdir(parents=True, exist_ok=True)
    write_weights(out_dir / "model.bin", arrays, meta)
    write_manifest(out_dir, stage, params, inputs, ["model.bin"])
    print(f"[{stage}] {note} -> {out_dir}")


def _serve_rankings(model_path: Path, dataset, assignment, counts, country_of, k: int) -> list[list[int]]:
    """Ranked unseen tracks for each counts row, whatever the model type."""
    import numpy as np

    from .artifacts import read_weights
    from .context import Centroids, context_for_counts
    from .recsys import (
        WEIGHT_NAMES,
        GatedVae,
        ImfConfig,
        ImfModel,
        MpModel,
        VaeConfig,
        imf_recommend,
        mp_recommend,
        recommend,
    )

    arrays, meta = read_weights(model_path)
    n_rows = counts.shape[0]
    if meta["type"] == "mp":
        ranked = {int(key): arrays[f"rank_{key}"].astype(np.int64) for key in meta["keys"]}
        model = MpModel(
            scope=meta["scope"], ranked=ranked, global_ranking=arrays["global_ranking"].astype(np.int64)
        )
        if meta["scope"] == "global":
            groups = [None] * n_rows
        elif meta["scope"] == "country":
            groups = [int(c) for c in country_of]
        else:
            groups = [int(assignment.labels[c]) for c in country_of]
        return [mp_recommend(model, counts[i], k, group=groups[i]) for i in range(n_rows)]
    if meta["type"] == "imf":
        model = ImfModel(
            user_factors=arrays["user_factors"],
            item_factors=arrays["item_factors"],
            item_popularity=arrays["item_popularity"],
            config=ImfConfig(**meta["config"]),
        )
        return [imf_recommend(model, counts[i], k) for i in range(n_rows)]
    vae_cfg = VaeConfig(**meta["config"])
    model = GatedVae({name: arrays[name] for name in WEIGHT_NAMES}, vae_cfg, int(meta["n_context"]))
    if meta["context"] == "none":
        return [recommend(model, counts[i], None, k) for i in range(n_rows)]
    kind = CONTEXT_KIND[meta["context"]]
    centroids = None
    if "centroids" in arrays:
        centroids = Centroids(
            kind=meta["centroid_kind"], vectors=arrays["centroids"], has_noise_row=meta["has_noise_row"]
        )
    context = context_for_counts(counts, country_of, assignment, centroids, kind)
    return [recommend(model, counts[i], context[i : i + 1], k) for i in range(n_rows)]


def stage_evaluate(
    cfg: PipelineConfig,
    root: Path,
    model_dirs: list[Path],
    splits_dir: Path,
    out_csv: Path,
    svg_name: str | None,
) -> None:
    from .artifacts import write_manifest
    from .evaluation import METRIC_NAMES, compare_to_baseline, evaluate_rankings, load_splits, write_results_csv
    from .plots import metric_bars_svg, write_svg

    dataset_dir, cluster_dir = root / "ingest", root / "cluster"
    model_files = [d / "model.bin" for d in model_dirs]
    inputs = _dataset_paths(dataset_dir) + [str(splits_dir / "splits.json")] + [str(p) for p in model_files]
    needs_labels = (cluster_dir / "labels.tsv").is_file()
    if needs_labels:
        inputs.append(str(cluster_dir / "labels.tsv"))
    names = [d.name for d in model_dirs]
    params = {"ks": list(cfg.ks), "models": names, "baseline": BASELINE_MODEL, "svg": svg_name or ""}
    _require("evaluate", inputs)
    out_dir = out_csv.parent
    if _skip(out_dir, "evaluate", params, inputs):
        return
    dataset = _load_ds("evaluate", dataset_dir)
    assignment = (
        _load_assignment("evaluate", cluster_dir, dataset) if needs_labels else _all_noise_assignment(dataset)
    )
    splits = load_splits(splits_dir, dataset)
    counts = splits.test.input_counts
    country_of = _country_rows(dataset, splits.test.user_ids)
    k_max = max(cfg.ks)
    results = {}
    for path, name in zip(model_files, names):
        rankings = _serve_rankings(path, dataset, assignment, counts, country_of, k_max)
        results[name] = evaluate_rankings(rankings, splits.test.holdout, cfg.ks)
    if BASELINE_MODEL in results:
        baseline = results[BASELINE_MODEL]
        for name, result in results.items():
            if name != BASELINE_MODEL:
                result.p_vs_baseline = compare_to_baseline(result, baseline)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_results_csv(out_csv, results, cfg.ks)
    outputs = [out_csv.name]
    if svg_name:
        keys = [(metric, k) for metric in METRIC_NAMES for k in cfg.ks]
        write_svg(out_dir / svg_name, metric_bars_svg({n: r.means for n, r in results.items()}, keys))
        outputs.append(svg_name)
    write_manifest(out_dir, "evaluate", params, inputs, outputs)
    print(f"[evaluate] {len(names)} models on {results[names[0]].n_scored} scored users -> {out_csv}")


def run_pipeline(cfg: PipelineConfig, synthetic: bool) -> Path:
    """All stages in order against the root layout; returns the results path."""
    root = cfg.root
    if synthetic:
        _guard("synth", stage_synth, cfg, root / "raw")
    events = Path(cfg.events) if cfg.events else root / "raw" / "events.tsv"
    users = Path(cfg.users) if cfg.users else root / "raw" / "users.tsv"
    _guard("ingest", stage_ingest, cfg, events, users, root / "ingest")
    _guard("features", stage_features, cfg, root / "ingest", root / "features")
    _guard("embed", stage_embed, cfg, root / "features", root / "embed", "coords.svg")
    _guard("cluster", stage_cluster, cfg, root / "embed", root / "cluster", "reachability.svg")
    _guard("archetypes", stage_archetypes, cfg, root, root / "archetypes" / "report.csv")
    for flag in CONTEXT_CHOICES:
        _guard("context", stage_context_one, cfg, root, flag, root / "context" / flag)
    _guard("splits", stage_splits, cfg, root / "ingest", root / "splits")
    for name in MODEL_NAMES:
        _guard(f"train:{name}", stage_train_one, cfg, root, name, root / "models" / name)
    model_dirs = [root / "models" / name for name in MODEL_NAMES]
    out_csv = root / "eval" / "results.csv"
    _guard("evaluate", stage_evaluate, cfg, root, model_dirs, root / "splits", out_csv, "metrics.svg")
    return out_csv


# ---------------------------------------------------------------------------
# subcommand handlers


def cmd_synth(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out) if args.out else cfg.root / "raw"
    _guard("synth", stage_synth, cfg, out)
    return 0


def cmd_ingest(args) -> int:
    cfg = _resolve_config(args)
    events = Path(cfg.events) if cfg.events else cfg.root / "raw" / "events.tsv"
    users = Path(cfg.users) if cfg.users else cfg.root / "raw" / "users.tsv"
    out = Path(args.out) if args.out else cfg.root / "ingest"
    _guard("ingest", stage_ingest, cfg, events, users, out)
    return 0


def cmd_features(args) -> int:
    cfg = _resolve_config(args)
    dataset_dir = Path(args.in_dir) if args.in_dir else cfg.root / "ingest"
    out = Path(args.out) if args.out else cfg.root / "features"
    _guard("features", stage_features, cfg, dataset_dir, out)
    return 0


def cmd_embed(args) -> int:
    cfg = _resolve_config(args)
    features_dir = Path(args.in_dir) if args.in_dir else cfg.root / "features"
    out = Path(args.out) if args.out else cfg.root / "embed"
    if args.grid:
        _guard("embed", embed_grid, cfg, features_dir, out)
    else:
        _guard("embed", stage_embed, cfg, features_dir, out, args.svg)
    return 0


def cmd_cluster(args) -> int:
    cfg = _resolve_config(args)
    embed_dir = Path(args.in_dir) if args.in_dir else cfg.root / "embed"
    out = Path(args.out) if args.out else cfg.root / "cluster"
    _guard("cluster", stage_cluster, cfg, embed_dir, out, args.svg)
    return 0


def cmd_archetypes(args) -> int:
    cfg = _resolve_config(args)
    root = Path(args.in_dir) if args.in_dir else cfg.root
    report = Path(args.out) if args.out else cfg.root / "archetypes" / "report.csv"
    _guard("archetypes", stage_archetypes, cfg, root, report)
    return 0


def cmd_context(args) -> int:
    cfg = _resolve_config(args)
    root = Path(args.in_dir) if args.in_dir else cfg.root
    out = Path(args.out) if args.out else cfg.root / "context" / args.model
    _guard("context", stage_context_one, cfg, root, args.model, out)
    return 0


def cmd_splits(args) -> int:
    cfg = _resolve_config(args)
    dataset_dir = Path(args.in_dir) if args.in_dir else cfg.root / "ingest"
    out = Path(args.out) if args.out else cfg.root / "splits"
    _guard("splits", stage_splits, cfg, dataset_dir, out)
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    root = Path(args.in_dir) if args.in_dir else cfg.root
    if args.model == "mp":
        name = f"mp-{args.scope}"
    elif args.model == "imf":
        name = "imf"
    elif args.model == "vae-ctx":
        if args.context == "none":
            raise PipelineError("train", "vae-ctx requires a context model (pass --context)")
        name = f"vae-{args.context}"
    else:
        name = "vae" if args.context == "none" else f"vae-{args.context}"
    out = Path(args.out) if args.out else cfg.root / "models" / name
    _guard(f"train:{name}", stage_train_one, cfg, root, name, out)
    return 0


def cmd_recommend(args) -> int:
    cfg = _resolve_config(args)

    import numpy as np

    root = cfg.root
    model_path = Path(args.model_dir) / "model.bin"
    if not model_path.is_file():
        raise PipelineError("recommend", f"no trained model at {model_path}")
    dataset = _guard("recommend", _load_ds, "recommend", root / "ingest")
    if args.user not in dataset.users:
        raise PipelineError("recommend", f"unknown user id {args.user}")
    labels_file = root / "cluster" / "labels.tsv"
    assignment = (
        _load_assignment("recommend", root / "cluster", dataset)
        if labels_file.is_file()
        else _all_noise_assignment(dataset)
    )
    counts = np.zeros((1, dataset.n_tracks))
    tidx = dataset.track_index
    for event in dataset.events:
        if event.user_id == args.user:
            counts[0, tidx[event.track_id]] += 1.0
    country_of = _country_rows(dataset, [args.user])
    rankings = _guard(
        "recommend", _serve_rankings, model_path, dataset, assignment, counts, country_of, args.k
    )
    original = sorted(tidx, key=tidx.get)
    for dense in rankings[0]:
        print(original[dense])
    return 0


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    model_dirs = [Path(d) for d in args.models]
    splits_dir = Path(args.splits) if args.splits else cfg.root / "splits"
    out = Path(args.out) if args.out else cfg.root / "eval" / "results.csv"
    _guard("evaluate", stage_evaluate, cfg, cfg.root, model_dirs, splits_dir, out, args.svg)
    return 0


def cmd_reproduce(args) -> int:
    if not args.synthetic:
        raise PipelineError("reproduce", "only synthetic runs are supported (pass --synthetic)")
    cfg = _resolve_config(args)
    results = run_pipeline(cfg, synthetic=True)
    print(f"[reproduce] results at {results}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--root", help=f"artifact root directory (default ${ROOT_ENV} or {DEFAULT_ROOT}/)")
    shared.add_argument("--config", help="flat key = value settings file; flags override it")
    shared.add_argument("--threads", type=int, help="BLAS/OpenMP thread cap, 0 leaves it alone")
    shared.add_argument("--seed", type=int, help="root seed; every stage derives its own from it")

    parser = argparse.ArgumentParser(
        prog="georec",
        description="Country-archetype music recommendation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[shared], help="generate a synthetic listening corpus")
    p.add_argument("--countries", type=int)
    p.add_argument("--users-per-country", type=int, dest="users_per_country")
    p.add_argument("--tracks", type=int)
    p.add_argument("--archetypes", type=int)
    p.add_argument("--skew", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[shared], help="parse and filter raw listening logs")
    p.add_argument("--events")
    p.add_argument("--users")
    p.add_argument("--min-track-plays", type=int, dest="min_track_plays")
    p.add_argument("--min-country-les", type=int, dest="min_country_les")
    p.add_argument("--min-country-users", type=int, dest="min_country_users")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("features", parents=[shared], help="country track shares reduced by PCA")
    p.add_argument("--in", dest="in_dir")
    p.add_argument("--pca-dims", type=int, dest="pca_dims")
    p.add_argument("--out")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("embed", parents=[shared], help="t-SNE embedding of country features")
    p.add_argument("--in", dest="in_dir")
    p.add_argument("--perplexity", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--svg", nargs="?", const="coords.svg")
    p.add_argument("--grid", action="store_true", help="scan perplexity and min-size, score preservation")
    p.add_argument("--out")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("cluster", parents=[shared], help="OPTICS clustering of the embedding")
    p.add_argument("--in", dest="in_dir")
    p.add_argument("--min-size", type=int, dest="min_size")
    p.add_argument("--xi", type=float)
    p.add_argument("--svg", nargs="?", const="reachability.svg")
    p.add_argument("--out")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("archetypes", parents=[shared], help="per-cluster track charts and demographics")
    p.add_argument("--in", dest="in_dir")
    p.add_argument("--idf-threshold", type=float, dest="idf_threshold")
    p.add_argument("--top-k", type=int, dest="top_k")
    p.add_argument("--tags")
    p.add_argument("--out")
    p.set_defaults(func=cmd_archetypes)

    p = sub.add_parser("context", parents=[shared], help="user context vectors for the gated recommender")
    p.add_argument("--in", dest="in_dir")
    p.add_argument("--model", required=True, choices=CONTEXT_CHOICES)
    p.add_argument("--out")
    p.set_defaults(func=cmd_context)

    p = sub.add_parser("splits", parents=[shared], help="user-disjoint train/val/test split")
    p.add_argument("--in", dest="in_dir")
    p.add_argument("--val-fraction", type=float, dest="val_fraction")
    p.add_argument("--test-fraction", type=float, dest="test_fraction")
    p.add_argument("--holdout-fraction", type=float, dest="holdout_fraction")
    p.add_argument("--out")
    p.set_defaults(func=cmd_splits)

    p = sub.add_parser("train", parents=[shared], help="train one recommender")
    p.add_argument("--in", dest="in_dir")
    p.add_argument("--model", required=True, choices=("vae", "vae-ctx", "mp", "imf"))
    p.add_argument("--context", default="none", choices=("none",) + CONTEXT_CHOICES)
    p.add_argument("--scope", default="global", choices=("global", "country", "cluster"))
    p.add_argument("--hidden", type=int)
    p.add_argument("--latent", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("recommend", parents=[shared], help="top-k tracks for one user")
    p.add_argument("--model-dir", required=True, dest="model_dir")
    p.add_argument("--user", required=True, type=int)
    p.add_argument("--k", type=int, default=100)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("evaluate", parents=[shared], help="score trained models on the test split")
    p.add_argument("--models", required=True, nargs="+")
    p.add_argument("--splits")
    p.add_argument("--ks")
    p.add_argument("--svg", nargs="?", const="metrics.svg")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reproduce", parents=[shared], help="end-to-end deterministic synthetic run")
    p.add_argument("--synthetic", action="store_true")
    p.set_defaults(func=cmd_reproduce)

    return parser


def _early_threads(args: argparse.Namespace) -> int:
    """Thread cap before anything imports numpy, hence the local parsing."""
    if getattr(args, "threads", None) is not None:
        return args.threads
    config_path = getattr(args, "config", None)
    if config_path and Path(config_path).is_file():
        for raw in Path(config_path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if "=" in line:
                key, value = line.split("=", 1)
                if key.strip() == "threads":
                    try:
                        return int(value.strip())
                    except ValueError:
                        return 0
    return int(DEFAULTS["threads"])


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = _early_threads(args)
    if threads > 0:
        for var in THREAD_ENV_VARS:
            os.environ[var] = str(threads)
    try:
        return args.func(args)
    except PipelineError as err:
        print(f"error in stage '{err.stage}': {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
