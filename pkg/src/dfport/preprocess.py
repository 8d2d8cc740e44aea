"""Per-window instance normalization and multi-scale trend/residual split.

Normalization uses the population (1/L) variance with an epsilon under the
root; the trend at position t is the trailing moving average of the k values
ending at t-1, repeat-padded at the left edge so trend + residual always
reconstructs the input exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_EPSILON = 1e-8
DEFAULT_KERNELS = (5, 21)  # weekly / monthly trading windows


@dataclass(frozen=True)
class NormStats:
    mu: np.ndarray      # length-N window means
    sigma: np.ndarray   # length-N window stds, >= sqrt(epsilon)
    epsilon: float


@dataclass(frozen=True)
class Decomposition:
    trend: np.ndarray     # L x N
    residual: np.ndarray  # L x N
    kernels: tuple[int, ...]


def normalize(window: np.ndarray, epsilon: float = DEFAULT_EPSILON):
    """Standardize each column by its window mean and population std."""
    window = np.asarray(window, dtype=float)
    if window.ndim != 2 or window.shape[0] < 2:
        raise ValueError("window must be LxN with L >= 2")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    mu = window.mean(axis=0)
    sigma = np.sqrt(window.var(axis=0) + epsilon)
    if np.any(sigma <= 0):
        raise ValueError("zero sigma; use a positive epsilon")
    return (window - mu) / sigma, NormStats(mu, sigma, epsilon)


def denormalize(pred: np.ndarray, stats: NormStats) -> np.ndarray:
    """Invert `normalize` on an HxN prediction using the window statistics."""
    pred = np.asarray(pred, dtype=float)
    if pred.ndim != 2 or pred.shape[1] != stats.mu.shape[0]:
        raise ValueError("prediction width does not match normalization stats")
    return pred * stats.sigma + stats.mu


def _trailing_mean(x: np.ndarray, k: int) -> np.ndarray:
    """Mean of the k values ending at t-1, repeat-padding before the start."""
    L = x.shape[0]
    padded = np.concatenate([np.repeat(x[:1], k, axis=0), x], axis=0)
    # window for output t covers padded rows [t, t+k), i.e. originals [t-k, t)
    return np.stack([padded[t:t + k].mean(axis=0) for t in range(L)])


def decompose(normalized: np.ndarray, kernels=DEFAULT_KERNELS) -> Decomposition:
    """Average trailing-moving-average trends over all kernel widths."""
    x = np.asarray(normalized, dtype=float)
    kernels = tuple(int(k) for k in kernels)
    if not kernels:
        raise ValueError("kernel list must be nonempty")
    if any(k < 1 for k in kernels):
        raise ValueError("kernel widths must be >= 1")
    trends = [_trailing_mean(x, k) for k in kernels]
    trend = np.mean(trends, axis=0)
    return Decomposition(trend, x - trend, kernels)
