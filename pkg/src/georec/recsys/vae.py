"""Context-gated variational autoencoder trained with hand-rolled numpy.

The encoder maps a user's (binarized) listening vector through one tanh
layer to mean and sigma vectors; the context vector passes through a
sigmoid layer into a gate that multiplies the sampled latent code
elementwise. A contextless model runs the same code path with the gate
pinned to ones. The decoder mirrors the encoder; the pre-activation of
its last layer serves as logits for a multinomial reconstruction
likelihood, while tanh of those logits is the reported output so scores
stay bounded. Ranking is unaffected because tanh is strictly monotone.

All gradients are derived by hand and checked against finite
differences in the tests. Updates use per-parameter adaptive step sizes
(first and second moment estimates), and the KL weight anneals linearly
from zero to its configured value over the first half of training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..metrics import ndcg_at_k

SIGMA_SQ_FLOOR = 1e-12

WEIGHT_NAMES = ("W_enc1", "W_enc_mu", "W_enc_sigma", "W_context", "W_dec1", "W_dec2")

INPUT_MODES = ("binary", "raw", "sum")


@dataclass
class VaeConfig:
    hidden: int = 1200
    latent: int = 600
    kl_weight: float = 0.2
    dropout: float = 0.5
    epochs: int = 50
    batch_size: int = 500
    learning_rate: float = 1e-3
    seed: int = 0
    input_mode: str = "binary"
    anneal: bool = True
    val_k: int = 100

    def __post_init__(self) -> None:
        if self.hidden < 1 or self.latent < 1:
            raise ValueError("hidden and latent must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be nonnegative")
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode must be one of {INPUT_MODES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")


@dataclass
class GatedVae:
    weights: dict[str, np.ndarray]
    config: VaeConfig
    n_context: int  # 0 for the contextless variant

    @property
    def gated(self) -> bool:
        return self.n_context > 0


@dataclass
class TrainReport:
    loss: list[float] = field(default_factory=list)
    recon: list[float] = field(default_factory=list)
    kl: list[float] = field(default_factory=list)
    val_ndcg: list[float] = field(default_factory=list)
    best_epoch: int = -1


def init_weights(n_tracks: int, n_context: int, cfg: VaeConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Seeded normal initialization scaled by each layer's fan-in."""
    shapes = {
        "W_enc1": (cfg.hidden, n_tracks),
        "W_enc_mu": (cfg.latent, cfg.hidden),
        "W_enc_sigma": (cfg.latent, cfg.hidden),
        "W_context": (cfg.latent, max(n_context, 1)),
        "W_dec1": (cfg.hidden, cfg.latent),
        "W_dec2": (n_tracks, cfg.hidden),
    }
    return {name: rng.normal(0.0, 1.0 / np.sqrt(s[1]), size=s) for name, s in shapes.items()}


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(model: GatedVae, x: np.ndarray, context: np.ndarray | None, eps: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Full forward pass over a batch; rows are users.

    Returns every intermediate needed for the backward pass: enc1, mu,
    sigma, gate, z, dec1, logits, and t_hat = tanh(logits). With eps
    None the latent code is the gated mean (deterministic inference).
    A contextless model (or context None on a gated one is an error)
    pins the gate to ones inside the same code path.
    """
    w = model.weights
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != w["W_enc1"].shape[1]:
        raise ValueError(f"expected {w['W_enc1'].shape[1]} tracks, got {x.shape[1]}")
    enc1 = np.tanh(x @ w["W_enc1"].T)
    mu = np.tanh(enc1 @ w["W_enc_mu"].T)
    sigma = np.tanh(enc1 @ w["W_enc_sigma"].T)
    if model.gated:
        if context is None:
            raise ValueError("gated model requires a context batch")
        context = np.atleast_2d(np.asarray(context, dtype=np.float64))
        if context.shape != (x.shape[0], model.n_context):
            raise ValueError(f"expected context shape {(x.shape[0], model.n_context)}, got {context.shape}")
        gate = _sigmoid(context @ w["W_context"].T)
    else:
        gate = np.ones_like(mu)
    if eps is None:
        eps = np.zeros_like(mu)
    z = (mu + sigma * eps) * gate
    dec1 = np.tanh(z @ w["W_dec1"].T)
    logits = dec1 @ w["W_dec2"].T
    return {
        "x": x, "context": context, "eps": eps, "enc1": enc1, "mu": mu,
        "sigma": sigma, "gate": gate, "z": z, "dec1": dec1,
        "logits": logits, "t_hat": np.tanh(logits),
    }


def loss_terms(t: np.ndarray, logits: np.ndarray, mu: np.ndarray, sigma: np.ndarray, beta: float) -> tuple[float, float, float]:
    """(total, reconstruction, kl), each summed over latent or track
    dims and averaged over the batch.

    Reconstruction is the negative multinomial log-likelihood of the
    target counts under softmax(logits). The KL against a standard
    normal uses sigma squared floored at SIGMA_SQ_FLOOR so the log term
    stays finite when the tanh output crosses zero.
    """
    t = np.atleast_2d(t)
    logits = np.atleast_2d(logits)
    mu, sigma = np.atleast_2d(mu), np.atleast_2d(sigma)
    nll = -(t * _log_softmax(logits)).sum(axis=1)
    s2 = np.maximum(sigma**2, SIGMA_SQ_FLOOR)
    kl = 0.5 * (s2 + mu**2 - 1.0 - np.log(s2)).sum(axis=1)
    recon = float(nll.mean())
    kl_mean = float(kl.mean())
    return recon + beta * kl_mean, recon, kl_mean


def loss(t: np.ndarray, logits: np.ndarray, mu: np.ndarray, sigma: np.ndarray, beta: float) -> float:
    return loss_terms(t, logits, mu, sigma, beta)[0]


def gradients(model: GatedVae, acts: dict[str, np.ndarray], t: np.ndarray, beta: float) -> dict[str, np.ndarray]:
    """Analytic gradients of the batch-mean loss for every weight."""
    w = model.weights
    t = np.atleast_2d(np.asarray(t, dtype=np.float64))
    b = t.shape[0]
    x, enc1, mu, sigma = acts["x"], acts["enc1"], acts["mu"], acts["sigma"]
    gate, eps, z, dec1, logits = acts["gate"], acts["eps"], acts["z"], acts["dec1"], acts["logits"]

    # d(nll)/d(logits) = softmax * total_plays - t, per row
    probs = np.exp(_log_softmax(logits))
    d_logits = (probs * t.sum(axis=1, keepdims=True) - t) / b
    g_dec2 = d_logits.T @ dec1
    d_dec1 = d_logits @ w["W_dec2"]
    d_pre_dec1 = d_dec1 * (1.0 - dec1**2)
    g_dec1 = d_pre_dec1.T @ z
    d_z = d_pre_dec1 @ w["W_dec1"]

    # KL contributions; the sigma term vanishes where the floor is active
    d_mu = d_z * gate + (beta / b) * mu
    above = sigma**2 > SIGMA_SQ_FLOOR
    d_sigma = d_z * gate * eps + (beta / b) * np.where(above, sigma - 1.0 / np.where(above, sigma, 1.0), 0.0)
    d_pre_mu = d_mu * (1.0 - mu**2)
    d_pre_sigma = d_sigma * (1.0 - sigma**2)
    g_mu = d_pre_mu.T @ enc1
    g_sigma = d_pre_sigma.T @ enc1

    if model.gated:
        d_gate = d_z * (mu + sigma * eps)
        d_pre_gate = d_gate * gate * (1.0 - gate)
        g_ctx = d_pre_gate.T @ acts["context"]
    else:
        g_ctx = np.zeros_like(w["W_context"])

    d_enc1 = d_pre_mu @ w["W_enc_mu"] + d_pre_sigma @ w["W_enc_sigma"]
    d_pre_enc1 = d_enc1 * (1.0 - enc1**2)
    g_enc1 = d_pre_enc1.T @ x
    return {
        "W_enc1": g_enc1, "W_enc_mu": g_mu, "W_enc_sigma": g_sigma,
        "W_context": g_ctx, "W_dec1": g_dec1, "W_dec2": g_dec2,
    }


def preprocess(counts: np.ndarray, mode: str) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    if mode == "binary":
        return (counts > 0).astype(np.float64)
    if mode == "raw":
        return counts.copy()
    if mode == "sum":
        totals = counts.sum(axis=-1, keepdims=True)
        return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    raise ValueError(f"input_mode must be one of {INPUT_MODES}")


def _beta_at(epoch: int, cfg: VaeConfig) -> float:
    if not cfg.anneal:
        return cfg.kl_weight
    half = max(1, cfg.epochs // 2)
    return cfg.kl_weight * min(1.0, epoch / half)


class _Adam:
    """Per-parameter adaptive steps from first and second moments."""

    def __init__(self, weights: dict[str, np.ndarray], lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in weights.items()}
        self.v = {k: np.zeros_like(v) for k, v in weights.items()}
        self.t = 0

    def step(self, weights: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g**2
            m_hat = self.m[k] / (1 - self.b1**self.t)
            v_hat = self.v[k] / (1 - self.b2**self.t)
            weights[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(
    train_counts: np.ndarray,
    train_context: np.ndarray | None,
    cfg: VaeConfig,
    val_input: np.ndarray | None = None,
    val_holdout: list[set[int]] | None = None,
    val_context: np.ndarray | None = None,
) -> tuple[GatedVae, TrainReport]:
    """Minibatch training with seeded shuffling, dropout, and noise.

    Validation users are scored after every epoch by ranking unseen
    tracks from their input history (noise-free forward pass) and
    computing NDCG at val_k against their holdout sets; the weights from
    the best epoch are returned. Without validation data the last epoch
    wins.
    """
    rng = np.random.default_rng(cfg.seed)
    counts = np.asarray(train_counts, dtype=np.float64)
    n_users, n_tracks = counts.shape
    n_context = 0 if train_context is None else int(train_context.shape[1])
    if train_context is not None and train_context.shape[0] != n_users:
        raise ValueError("context rows must match training users")
    model = GatedVae(init_weights(n_tracks, n_context, cfg, rng), cfg, n_context)
    targets = preprocess(counts, cfg.input_mode)
    opt = _Adam(model.weights, cfg.learning_rate)
    report = TrainReport()
    best_weights = {k: v.copy() for k, v in model.weights.items()}
    best_score = -np.inf

    for epoch in range(cfg.epochs):
        beta = _beta_at(epoch, cfg)
        order = rng.permutation(n_users)
        tot = np.zeros(3)
        n_batches = 0
        for start in range(0, n_users, cfg.batch_size):
            rows = order[start : start + cfg.batch_size]
            t_batch = targets[rows]
            x_batch = t_batch
            if cfg.dropout > 0:
                keep = rng.random(t_batch.shape) >= cfg.dropout
                x_batch = t_batch * keep / (1.0 - cfg.dropout)
            eps = rng.standard_normal((len(rows), cfg.latent))
            ctx = None if train_context is None else train_context[rows]
            acts = forward(model, x_batch, ctx, eps)
            total, recon, kl = loss_terms(t_batch, acts["logits"], acts["mu"], acts["sigma"], beta)
            if not np.isfinite(total):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}: total={total}, recon={recon}, kl={kl}"
                )
            opt.step(model.weights, gradients(model, acts, t_batch, beta))
            tot += (total, recon, kl)
            n_batches += 1
        report.loss.append(tot[0] / n_batches)
        report.recon.append(tot[1] / n_batches)
        report.kl.append(tot[2] / n_batches)

        if val_input is not None and val_holdout is not None:
            score = _validation_ndcg(model, val_input, val_holdout, val_context, cfg)
            report.val_ndcg.append(score)
        else:
            score = -report.loss[-1]
        if score > best_score:
            best_score = score
            report.best_epoch = epoch
            best_weights = {k: v.copy() for k, v in model.weights.items()}

    model.weights = best_weights
    return model, report


def _validation_ndcg(model: GatedVae, val_input: np.ndarray, val_holdout: list[set[int]], val_context: np.ndarray | None, cfg: VaeConfig) -> float:
    scores = []
    for i in range(val_input.shape[0]):
        ctx = None if val_context is None else val_context[i : i + 1]
        recs = recommend(model, val_input[i], ctx, cfg.val_k)
        scores.append(ndcg_at_k(recs, val_holdout[i], cfg.val_k))
    return float(np.mean(scores)) if scores else 0.0


def recommend(model: GatedVae, known_counts: np.ndarray, context: np.ndarray | None, k: int) -> list[int]:
    """Top-k unseen tracks by decoder score, ties broken by index.

    Inference is noise-free (the latent code is the gated mean). Tracks
    already in the user's history are excluded, so a user who has heard
    everything gets an empty list.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    known_counts = np.asarray(known_counts, dtype=np.float64).reshape(1, -1)
    acts = forward(model, preprocess(known_counts, model.config.input_mode), context, eps=None)
    scores = acts["logits"][0].copy()
    unseen = np.flatnonzero(known_counts[0] == 0)
    if unseen.size == 0:
        return []
    # stable sort on negated scores keeps ties in index order
    ranked = unseen[np.argsort(-scores[unseen], kind="stable")]
    return [int(i) for i in ranked[:k]]
