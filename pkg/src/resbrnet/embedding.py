"""Exact t-SNE over penultimate-layer features."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ShapeError, TsneConfigError
from .rng import generator

_LN2 = np.log(2.0)


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    initial_momentum: float = 0.5
    final_momentum: float = 0.8
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250  # momentum switches at the same point
    seed: int = 0
    bandwidth_tol: float = 1e-5  # on entropy, in bits
    bandwidth_steps: int = 50


@dataclass
class FeatureMatrix:
    features: np.ndarray  # [n, d]
    labels: np.ndarray


@dataclass
class TsneResult:
    embedding: np.ndarray  # [n, 2]
    perplexities: np.ndarray  # achieved per-point perplexity
    kl_history: list = field(default_factory=list)  # (iteration, KL(P||Q)) with the true P

    def kl_at(self, iteration: int) -> float:
        for it, kl in self.kl_history:
            if it == iteration:
                return kl
        raise KeyError(iteration)


def extract_features(model, ds, batch_size: int = 32) -> FeatureMatrix:
    """Infer-mode activations feeding the final classifier, one row per sample."""
    images = ds.images
    if images.ndim != 4 or tuple(images.shape[1:]) != tuple(model.cfg.input):
        raise ShapeError(f"dataset images {list(images.shape[1:])} do not match model input {list(model.cfg.input)}")
    rows = []
    for start in range(0, len(images), batch_size):
        _, feats = model.forward(images[start : start + batch_size], "infer", return_features=True)
        rows.append(feats.data.astype(np.float64))
    feats = np.concatenate(rows) if rows else np.zeros((0, 0))
    return FeatureMatrix(feats, np.asarray(ds.labels, dtype=np.int64))


def squared_distances(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def conditional_probabilities(d2: np.ndarray, perplexity: float, tol: float = 1e-5, max_steps: int = 50):
    """Row-stochastic ``p_{j|i}`` with per-row Gaussian precision matching ``perplexity``.

    Bisection runs on log-precision for all rows at once; returns the matrix
    and the achieved perplexities.
    """
    n = d2.shape[0]
    target = np.log2(perplexity)
    off = ~np.eye(n, dtype=bool)
    d = np.where(off, d2, np.inf)
    d = d - d.min(axis=1, keepdims=True)  # shift so the nearest neighbour has weight 1
    scale = np.log(1.0 / max(float(np.mean(d2[off])), 1e-300))
    lo = np.full(n, scale - 60.0)
    hi = np.full(n, scale + 60.0)
    log_beta = np.full(n, scale)
    done = np.zeros(n, dtype=bool)

    def entropy(lb):
        beta = np.exp(lb)[:, None]
        w = np.exp(-d * beta)
        s = w.sum(axis=1)
        h_nats = np.log(s) + beta[:, 0] * np.sum(np.where(off, d, 0.0) * w, axis=1) / s
        return h_nats / _LN2, w / s[:, None]

    h, p = entropy(log_beta)
    for _ in range(max_steps):
        diff = h - target
        done = np.abs(diff) < tol
        if done.all():
            break
        # entropy falls as precision rises
        too_flat = (diff > 0) & ~done
        too_sharp = (diff < 0) & ~done
        lo = np.where(too_flat, log_beta, lo)
        hi = np.where(too_sharp, log_beta, hi)
        log_beta = np.where(done, log_beta, 0.5 * (lo + hi))
        h, p = entropy(log_beta)
    return p, np.exp2(h)


def joint_probabilities(x: np.ndarray, perplexity: float, tol: float = 1e-5, max_steps: int = 50):
    cond, perps = conditional_probabilities(squared_distances(x), perplexity, tol, max_steps)
    n = x.shape[0]
    return (cond + cond.T) / (2.0 * n), perps


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / np.maximum(q[mask], 1e-300))))


def _student_t(y: np.ndarray):
    num = 1.0 / (1.0 + squared_distances(y))
    np.fill_diagonal(num, 0.0)
    return num, num / num.sum()


def tsne(features, cfg: TsneConfig = TsneConfig()) -> TsneResult:
    """Embed ``features`` ([n, d] array or :class:`FeatureMatrix`) into 2-D."""
    x = features.features if isinstance(features, FeatureMatrix) else features
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InputError(f"features must be [n, d], got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("features contain non-finite values")
    n = x.shape[0]
    if cfg.perplexity <= 0 or n < 3 * cfg.perplexity:
        raise TsneConfigError(f"perplexity {cfg.perplexity} needs at least {3 * cfg.perplexity:g} points, got {n}")
    if cfg.iterations < 1:
        raise TsneConfigError("iterations must be >= 1")

    p, perps = joint_probabilities(x, cfg.perplexity, cfg.bandwidth_tol, cfg.bandwidth_steps)
    p = np.maximum(p, 1e-12)
    np.fill_diagonal(p, 0.0)
    p /= p.sum()

    y = generator(cfg.seed).normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    history = []
    for it in range(1, cfg.iterations + 1):
        early = it <= cfg.exaggeration_iters
        exag = cfg.early_exaggeration if early else 1.0
        momentum = cfg.initial_momentum if early else cfg.final_momentum
        num, q = _student_t(y)
        pq = (exag * p - q) * num
        grad = 4.0 * (pq.sum(axis=1)[:, None] * y - pq @ y)

        same_sign = (grad > 0) == (update > 0)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - cfg.learning_rate * gains * grad
        y = y + update
        y -= y.mean(axis=0)

        if it == cfg.exaggeration_iters or it == cfg.iterations or it % 50 == 0:
            history.append((it, kl_divergence(p, _student_t(y)[1])))
    return TsneResult(y, perps, history)
