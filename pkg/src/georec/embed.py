"""Exact t-SNE for mapping country feature vectors to two dimensions.

The corpus this pipeline targets has at most a few dozen countries, so
the quadratic-time formulation is used throughout: full pairwise
affinities, full Student-t kernel, no tree approximations. That keeps
every intermediate quantity testable against direct formula evaluation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

#: iteration at which early exaggeration ends and momentum switches
EXAGGERATION_END = 250

#: probabilities are floored at this value inside KL terms only
_EPS = 1e-12


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 5.0
    output_dims: int = 2
    iterations: int = 1000
    early_exaggeration: float = 12.0
    learning_rate: float = 200.0
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.perplexity <= 0:
            raise ValueError(f"perplexity must be positive, got {self.perplexity}")
        if self.output_dims != 2:
            raise ValueError("only 2-D embeddings are supported")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")


@dataclass(frozen=True)
class EmbeddingResult:
    coords: np.ndarray  # (n, 2)
    final_kl: float
    kl_trace: np.ndarray  # KL per iteration once exaggeration is off


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix with an exactly zero diagonal."""
    x = np.asarray(x, dtype=np.float64)
    sq = (x**2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(np.maximum(d2, 0.0))


def _row_gaussian(d2_row: np.ndarray, beta: float) -> tuple[np.ndarray, float]:
    """Affinities and Shannon entropy (nats) for one row at precision beta.

    The row is shifted by its minimum before exponentiation so the sum
    never underflows to zero, which keeps the bisection loop stable for
    arbitrarily large beta.
    """
    shift = d2_row.min()
    w = np.exp(-beta * (d2_row - shift))
    s = w.sum()
    p = w / s
    h = math.log(s) + beta * float(((d2_row - shift) * p).sum())
    return p, h


def perplexity_calibration(
    distances: np.ndarray,
    perplexity: float,
    tol: float = 1e-5,
    max_steps: int = 50,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-point Gaussian bandwidths matching a target perplexity.

    ``distances`` is a symmetric Euclidean distance matrix with zero
    diagonal; affinities use exp(-d^2 / (2 sigma_i^2)). Each row's sigma
    is bisected until 2^entropy equals the requested perplexity within
    ``tol`` (or ``max_steps`` halvings have run; rows whose entropy cannot
    reach the target, such as all-equidistant neighbors, keep the closest
    achievable value).

    Returns (P_conditional, sigmas): P rows sum to 1, diagonal is zero.
    """
    d = np.asarray(distances, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise ValueError("distance matrix contains non-finite entries")
    n = d.shape[0]
    if d.shape != (n, n):
        raise ValueError(f"distance matrix must be square, got {d.shape}")
    d2 = d**2
    p_cond = np.zeros((n, n), dtype=np.float64)
    sigmas = np.zeros(n, dtype=np.float64)
    others = np.arange(n)
    for i in range(n):
        row = d2[i, others != i]
        beta, beta_lo, beta_hi = 1.0, 0.0, np.inf
        p, h = _row_gaussian(row, beta)
        for _ in range(max_steps):
            if abs(math.exp(h) - perplexity) <= tol:
                break
            if math.exp(h) > perplexity:
                # entropy too high: sharpen the kernel
                beta_lo = beta
                beta = beta * 2.0 if beta_hi == np.inf else 0.5 * (beta + beta_hi)
            else:
                beta_hi = beta
                beta = 0.5 * (beta + beta_lo)
            p, h = _row_gaussian(row, beta)
        p_cond[i, others != i] = p
        sigmas[i] = math.sqrt(0.5 / beta)
    return p_cond, sigmas


def symmetrize(p_conditional: np.ndarray) -> np.ndarray:
    """Joint affinities P_ij = (P(j|i) + P(i|j)) / (2n); sums to one."""
    p = np.asarray(p_conditional, dtype=np.float64)
    n = p.shape[0]
    return (p + p.T) / (2.0 * n)


def student_t_q(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Low-dimensional affinities under a Student-t kernel with 1 dof.

    Returns (Q, W) where W_ij = 1 / (1 + ||y_i - y_j||^2) with zero
    diagonal and Q = W / sum(W).
    """
    y = np.asarray(y, dtype=np.float64)
    # overflow here means the optimizer diverged; that is detected from the
    # kernel sum below rather than warned about element by element
    with np.errstate(over="ignore", invalid="ignore"):
        sq = (y**2).sum(axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (y @ y.T)
        w = 1.0 / (1.0 + np.maximum(d2, 0.0))
    np.fill_diagonal(w, 0.0)
    total = w.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise FloatingPointError("degenerate Student-t kernel (coordinates diverged?)")
    return w / total, w


def kl_and_grad(p: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(P || Q) and its gradient with respect to the 2-D coordinates.

    grad_i = 4 sum_j (p_ij - q_ij) w_ij (y_i - y_j), the exact-t-SNE form.
    """
    q, w = student_t_q(y)
    mask = p > 0
    kl = float((p[mask] * np.log(p[mask] / np.maximum(q[mask], _EPS))).sum())
    pqw = (p - q) * w
    grad = 4.0 * ((np.diag(pqw.sum(axis=1)) - pqw) @ y)
    return kl, grad


def tsne_run(
    points: np.ndarray,
    cfg: TsneConfig,
    init: np.ndarray | None = None,
) -> EmbeddingResult:
    """Gradient-descend KL(P || Q) from a tiny Gaussian initialization.

    Early exaggeration multiplies P for the first EXAGGERATION_END
    iterations; at that boundary the momentum buffer is cleared so the
    un-exaggerated phase starts from a standstill, and the KL trace is
    recorded from there on (the exaggerated objective is a different
    function, so its values would not be comparable). ``init`` overrides
    the random start, mainly for tests.
    """
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    if cfg.perplexity >= n:
        raise ValueError(f"perplexity {cfg.perplexity} must be < n_points {n}")

    p_cond, _ = perplexity_calibration(pairwise_distances(x), cfg.perplexity)
    p = symmetrize(p_cond)

    if init is not None:
        y = np.array(init, dtype=np.float64, copy=True)
        if y.shape != (n, cfg.output_dims):
            raise ValueError(f"init shape {y.shape} != {(n, cfg.output_dims)}")
    else:
        rng = np.random.default_rng(cfg.seed)
        y = rng.normal(0.0, 1e-4, size=(n, cfg.output_dims))
    velocity = np.zeros_like(y)
    kl_trace: list[float] = []
    kl = math.inf

    for it in range(cfg.iterations):
        exaggerated = it < EXAGGERATION_END
        if it == EXAGGERATION_END:
            velocity[:] = 0.0
        p_used = p * cfg.early_exaggeration if exaggerated else p
        try:
            kl, grad = kl_and_grad(p_used, y)
        except FloatingPointError as exc:
            raise RuntimeError(f"t-SNE diverged at iteration {it}: {exc}") from None
        momentum = cfg.momentum_early if exaggerated else cfg.momentum_late
        velocity = momentum * velocity - cfg.learning_rate * grad
        y = y + velocity
        y = y - y.mean(axis=0)
        if not np.all(np.isfinite(y)):
            raise RuntimeError(f"t-SNE diverged at iteration {it}: non-finite coordinates")
        if not exaggerated:
            kl, _ = kl_and_grad(p, y)
            kl_trace.append(kl)

    if kl_trace:
        final_kl = kl_trace[-1]
    else:
        final_kl, _ = kl_and_grad(p, y)
    log.info("t-SNE finished: %d iterations, final KL %.6f", cfg.iterations, final_kl)
    return EmbeddingResult(coords=y, final_kl=final_kl, kl_trace=np.asarray(kl_trace))


def neighborhood_preservation(x: np.ndarray, y: np.ndarray, k: int = 3) -> float:
    """Mean fraction of each point's k nearest neighbors kept by y.

    Neighbor ties are broken by index, so the score is deterministic.
    """
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError("point sets differ in size")
    if not 1 <= k < n:
        raise ValueError(f"k must be in [1, n), got {k}")
    dx = pairwise_distances(x)
    dy = pairwise_distances(y)
    np.fill_diagonal(dx, np.inf)
    np.fill_diagonal(dy, np.inf)
    keep = 0.0
    for i in range(n):
        nx = set(np.argsort(dx[i], kind="stable")[:k].tolist())
        ny = set(np.argsort(dy[i], kind="stable")[:k].tolist())
        keep += len(nx & ny) / k
    return keep / n
