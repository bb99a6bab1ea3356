"""Frame-to-clip aggregation.

All functions take a ``T x K`` array (frames by channels) or a
:class:`FrameSequence` and return a length-``K`` vector.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError, ZeroWeight


@dataclass(frozen=True)
class FrameSequence:
    values: np.ndarray  # T x K
    frame_rate: float = 0.0


def _frames(fs) -> np.ndarray:
    x = fs.values if isinstance(fs, FrameSequence) else fs
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeError(f"expected a non-empty T x K matrix, got shape {x.shape}")
    return x


def _probabilities(fs) -> np.ndarray:
    p = _frames(fs)
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise DomainError("frame probabilities must lie in [0, 1]")
    return p


def average_pool(fs) -> np.ndarray:
    return _frames(fs).mean(axis=0)


def max_pool(fs) -> np.ndarray:
    return _frames(fs).max(axis=0)


def _square_parts(p: np.ndarray):
    """Error-free split p*p = hi + lo (Dekker)."""
    hi = p * p
    c = 134217729.0 * p  # 2**27 + 1
    ph = c - (c - p)
    pl = p - ph
    lo = ((ph * ph - hi) + 2.0 * ph * pl) + pl * pl
    return hi, lo


def linear_softmax_pool(probs) -> np.ndarray:
    """Per channel, sum(p^2) / sum(p); frames weight themselves by their own probability.

    Both sums are accumulated exactly, so the result is independent of frame
    order.  A channel whose probabilities are all zero pools to 0.
    """
    p = _probabilities(probs)
    hi, lo = _square_parts(p)
    out = np.zeros(p.shape[1])
    for c in range(p.shape[1]):
        den = math.fsum(p[:, c])
        if den > 0:
            out[c] = math.fsum(np.concatenate([hi[:, c], lo[:, c]])) / den
    return np.clip(out, p.min(axis=0), p.max(axis=0))


def attention_pool(probs, weights) -> np.ndarray:
    """Per channel, sum(w * p) / sum(w) with non-negative attention weights."""
    p = _frames(probs)
    w = _frames(weights)
    if p.shape != w.shape:
        raise ShapeError(f"probs {p.shape} and weights {w.shape} differ in shape")
    if np.any(w < 0):
        raise DomainError("attention weights must be non-negative")
    den = w.sum(axis=0)
    if np.any(den <= 0):
        bad = np.flatnonzero(den <= 0).tolist()
        raise ZeroWeight(f"all-zero attention weights in channel(s) {bad}")
    return (w * p).sum(axis=0) / den


POOLERS = {"avg": average_pool, "max": max_pool, "linsoftmax": linear_softmax_pool}
