"""Exact (dense) t-SNE for small label sets."""

from __future__ import annotations

import math

import numpy as np

from ..errors import InvalidPerplexity

DEFAULT_PERPLEXITY = 30.0


def _row_affinities(dist_row: np.ndarray, beta: float):
    """Gaussian conditional distribution over the other points and its entropy (nats)."""
    shifted = dist_row - dist_row.min()
    p = np.exp(-shifted * beta)
    s = p.sum()
    p /= s
    entropy = math.log(s) + beta * float(np.dot(shifted, p))
    return p, entropy


def conditional_probabilities(x, perplexity: float, tol: float = 1e-6, max_iter: int = 200):
    """Per-row conditional affinities ``P[i, j] = p(j | i)`` with entropy log(perplexity).

    Each row's Gaussian precision is found by bisection.  Returns ``(P, betas)``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    sq = np.sum(x * x, axis=1)
    dist = np.maximum(sq[:, None] + sq[None, :] - 2 * x @ x.T, 0.0)
    target = math.log(perplexity)
    P = np.zeros((n, n))
    betas = np.ones(n)
    for i in range(n):
        row = np.delete(dist[i], i)
        beta, lo, hi = 1.0, 0.0, math.inf
        # scale the starting precision to the row so exp() stays informative
        spread = float(np.mean(row - row.min()))
        if spread > 0:
            beta = 1.0 / spread
        p, h = _row_affinities(row, beta)
        for _ in range(max_iter):
            if abs(h - target) <= tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2 if math.isinf(hi) else (beta + hi) / 2
            else:
                hi = beta
                beta = (beta + lo) / 2
            p, h = _row_affinities(row, beta)
        P[i, np.arange(n) != i] = p
        betas[i] = beta
    return P, betas


def joint_probabilities(x, perplexity: float) -> np.ndarray:
    """Symmetrized affinities summing to one."""
    P, _ = conditional_probabilities(x, perplexity)
    joint = (P + P.T) / (2 * len(P))
    return joint / joint.sum()


def row_entropies(P: np.ndarray) -> np.ndarray:
    """Entropy in nats of each row of a conditional affinity matrix."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * np.log(P), 0.0)
    return -terms.sum(axis=1)


def check_perplexity(n: int, perplexity: float) -> None:
    if n < 4:
        raise InvalidPerplexity(f"t-SNE needs at least 4 rows, got {n}")
    if not 1.0 < perplexity < (n - 1) / 3:
        raise InvalidPerplexity(
            f"perplexity {perplexity} must lie strictly between 1 and (C-1)/3 = {(n - 1) / 3:.3f}"
        )


def default_perplexity(n: int) -> float:
    """30, clamped just below (C-1)/3 for small sets."""
    return min(DEFAULT_PERPLEXITY, (n - 1) / 3 * 0.99)


def tsne(vs, perplexity: float | None = None, iterations: int = 1000, seed: int = 0,
         learning_rate: float = 200.0, exaggeration: float = 12.0,
         exaggeration_iters: int = 250) -> np.ndarray:
    """Embed the rows of ``vs`` (a LabelVectorSet or C x D array) into 2-D."""
    x = np.asarray(getattr(vs, "matrix", vs), dtype=np.float64)
    n = len(x)
    if perplexity is None:
        perplexity = default_perplexity(n)
    check_perplexity(n, perplexity)

    P = np.maximum(joint_probabilities(x, perplexity), 1e-12)
    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)

    for it in range(iterations):
        early = it < exaggeration_iters
        p = P * exaggeration if early else P
        momentum = 0.5 if early else 0.8

        sq = np.sum(y * y, axis=1)
        num = 1.0 / (1.0 + np.maximum(sq[:, None] + sq[None, :] - 2 * y @ y.T, 0.0))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)
        w = (p - q) * num
        grad = 4.0 * (np.diag(w.sum(axis=1)) - w) @ y

        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - learning_rate * gains * grad
        y = y + update
        y -= y.mean(axis=0)
    return y
