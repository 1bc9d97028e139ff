"""Popularity and matrix-factorization baselines for the recommender.

MP ranks tracks by their summed training playcounts, either globally or
within the target user's country or cluster. IMF factorizes the
binarized user-track matrix with a pointwise squared loss over the
positives plus an equal number of freshly sampled negatives per epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MP_SCOPES = ("global", "country", "cluster")

GLOBAL_KEY = -1  # scope value used for the single global ranking


def _ranked_by_count(sums: np.ndarray) -> np.ndarray:
    """Track indices sorted by playcount descending, ties by index."""
    return np.lexsort((np.arange(sums.shape[0]), -sums))


@dataclass
class MpModel:
    scope: str
    ranked: dict[int, np.ndarray]  # scope value -> full track ranking
    global_ranking: np.ndarray  # fallback when a scope value is unseen


def mp_train(train_counts: np.ndarray, scope: str, groups: np.ndarray | None = None) -> MpModel:
    """Build per-scope popularity rankings from training playcounts.

    groups assigns each training user to a scope value (country or
    cluster index); it is ignored for the global scope.
    """
    if scope not in MP_SCOPES:
        raise ValueError(f"scope must be one of {MP_SCOPES}")
    counts = np.asarray(train_counts, dtype=np.float64)
    global_ranking = _ranked_by_count(counts.sum(axis=0))
    ranked: dict[int, np.ndarray] = {GLOBAL_KEY: global_ranking}
    if scope != "global":
        if groups is None or len(groups) != counts.shape[0]:
            raise ValueError("per-user groups required for country or cluster scope")
        for g in np.unique(np.asarray(groups)):
            ranked[int(g)] = _ranked_by_count(counts[np.asarray(groups) == g].sum(axis=0))
    return MpModel(scope=scope, ranked=ranked, global_ranking=global_ranking)


def mp_recommend(model: MpModel, known_counts: np.ndarray, k: int, group: int | None = None) -> list[int]:
    """First k tracks of the scope ranking that the user has not heard.

    A scope value with no training users falls back to the global
    ranking so every user still receives recommendations.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    key = GLOBAL_KEY if model.scope == "global" else int(group) if group is not None else GLOBAL_KEY
    ranking = model.ranked.get(key, model.global_ranking)
    known = np.asarray(known_counts) > 0
    out = []
    for t in ranking:
        if not known[t]:
            out.append(int(t))
            if len(out) == k:
                break
    return out


@dataclass
class ImfConfig:
    dims: int = 128
    epochs: int = 30
    learning_rate: float = 0.05
    regularization: float = 0.01
    batch_size: int = 1024
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dims < 1 or self.epochs < 1:
            raise ValueError("dims and epochs must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.regularization < 0:
            raise ValueError("regularization must be nonnegative")


@dataclass
class ImfModel:
    user_factors: np.ndarray  # (n_train_users, dims)
    item_factors: np.ndarray  # (n_tracks, dims)
    item_popularity: np.ndarray  # training playcount sums, for cold starts
    config: ImfConfig = field(default_factory=ImfConfig)


def imf_train(train_counts: np.ndarray, cfg: ImfConfig) -> ImfModel:
    """SGD factorization of the binarized matrix with 50:50 negatives.

    Every epoch pairs each positive entry with one freshly sampled
    negative item for the same user, shuffles the pairs, and sweeps them
    in minibatches with pointwise squared-error updates. Within a batch
    the gradients use the factors from the batch start and accumulate
    in a fixed order, so seeded runs are reproducible.
    """
    counts = np.asarray(train_counts, dtype=np.float64)
    n_users, n_tracks = counts.shape
    rng = np.random.default_rng(cfg.seed)
    scale = 1.0 / np.sqrt(cfg.dims)
    p = rng.normal(0.0, scale, size=(n_users, cfg.dims))
    q = rng.normal(0.0, scale, size=(n_tracks, cfg.dims))
    pos_u, pos_i = np.nonzero(counts > 0)
    n_pos = pos_u.shape[0]
    lr, reg = cfg.learning_rate, cfg.regularization

    for _ in range(cfg.epochs):
        neg_i = rng.integers(0, n_tracks, size=n_pos)
        for _attempt in range(10):
            # redraw samples that landed on a positive entry
            bad = counts[pos_u, neg_i] > 0
            if not bad.any():
                break
            neg_i[bad] = rng.integers(0, n_tracks, size=int(bad.sum()))
        users = np.concatenate([pos_u, pos_u])
        items = np.concatenate([pos_i, neg_i])
        labels = np.concatenate([np.ones(n_pos), np.zeros(n_pos)])
        order = rng.permutation(users.shape[0])
        for start in range(0, order.shape[0], cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            ub, ib, yb = users[sel], items[sel], labels[sel]
            pu, qi = p[ub], q[ib]
            err = (pu * qi).sum(axis=1) - yb
            np.subtract.at(p, ub, lr * (err[:, None] * qi + reg * pu))
            np.subtract.at(q, ib, lr * (err[:, None] * pu + reg * qi))
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise RuntimeError("factorization diverged; lower the learning rate")
    return ImfModel(user_factors=p, item_factors=q, item_popularity=counts.sum(axis=0), config=cfg)


def imf_fold_in(model: ImfModel, known_counts: np.ndarray) -> np.ndarray:
    """Ridge least-squares user factor for a user outside the training set.

    Solves for the factor that best reconstructs the user's binarized
    row against all item factors, with the training regularization
    strength keeping the system well posed.
    """
    y = (np.asarray(known_counts, dtype=np.float64) > 0).astype(np.float64)
    q = model.item_factors
    reg = max(model.config.regularization, 1e-8)
    a = q.T @ q + reg * np.eye(q.shape[1])
    return np.linalg.solve(a, q.T @ y)


def imf_recommend(model: ImfModel, known_counts: np.ndarray, k: int, user_row: int | None = None) -> list[int]:
    """Top-k unseen tracks by factor dot product, ties by index.

    Training users pass their row index; anyone else is folded in from
    their history. A user with no history at all falls back to the
    training popularity ranking.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    known = np.asarray(known_counts) > 0
    unseen = np.flatnonzero(~known)
    if unseen.size == 0:
        return []
    if user_row is not None:
        factor = model.user_factors[user_row]
    elif known.any():
        factor = imf_fold_in(model, known_counts)
    else:
        ranking = _ranked_by_count(model.item_popularity)
        return [int(t) for t in ranking[np.isin(ranking, unseen)][:k]]
    scores = model.item_factors[unseen] @ factor
    ranked = unseen[np.argsort(-scores, kind="stable")]
    return [int(i) for i in ranked[:k]]
