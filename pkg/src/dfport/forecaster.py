"""Forecast heads: context-based forecaster with a pluggable encoder, and a
minimal affine forecaster used by the gradient-verification suites.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preprocess import NormStats, denormalize


class IdentityEncoder:
    """Default contextual encoder: passes representations through unchanged."""

    id = "identity"

    def encode(self, c: np.ndarray) -> np.ndarray:
        return c


class TanhEncoder:
    """One-hidden-layer nonlinear encoder for end-to-end demos."""

    def __init__(self, d_llm: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        s = 1.0 / np.sqrt(d_llm)
        self.w1 = rng.uniform(-s, s, size=(d_llm, d_llm))
        self.w2 = rng.uniform(-s, s, size=(d_llm, d_llm))
        self.id = f"tanh-{seed}"

    def encode(self, c: np.ndarray) -> np.ndarray:
        return np.tanh(c @ self.w1) @ self.w2


@dataclass
class ForecastHead:
    wf: np.ndarray  # d_llm x H

    @property
    def horizon(self) -> int:
        return self.wf.shape[1]


def forecast(c_market: np.ndarray, c_stock: np.ndarray, encoder,
             head: ForecastHead, stats: NormStats) -> np.ndarray:
    """Encode both contexts, fuse additively, project to H steps, denormalize."""
    if c_market.shape != c_stock.shape:
        raise ValueError("context shapes differ")
    z = encoder.encode(c_market) + encoder.encode(c_stock)  # N x d
    normalized = (z @ head.wf).T                            # H x N
    return denormalize(normalized, stats)


@dataclass
class LinearForecaster:
    """Affine map from a flattened LxN window to an HxN forecast.

    theta is laid out as an (L*N + 1) x (H*N) matrix: the last input row is
    the bias. Exists so that chain-rule gradients through the optimization
    layer can be checked against finite differences without attention noise.
    """

    theta: np.ndarray
    lookback: int
    n_assets: int
    horizon: int

    @classmethod
    def zeros(cls, lookback: int, n_assets: int, horizon: int) -> "LinearForecaster":
        return cls(np.zeros((lookback * n_assets + 1, horizon * n_assets)),
                   lookback, n_assets, horizon)

    @classmethod
    def random(cls, lookback: int, n_assets: int, horizon: int, seed: int,
               scale: float = 0.1) -> "LinearForecaster":
        rng = np.random.default_rng(seed)
        theta = rng.normal(scale=scale, size=(lookback * n_assets + 1,
                                              horizon * n_assets))
        return cls(theta, lookback, n_assets, horizon)

    def predict(self, window: np.ndarray) -> np.ndarray:
        window = np.asarray(window, dtype=float)
        if window.shape != (self.lookback, self.n_assets):
            raise ValueError("window shape mismatch")
        feat = np.append(window.ravel(), 1.0)
        return (feat @ self.theta).reshape(self.horizon, self.n_assets)

    def pred_jacobian(self, window: np.ndarray) -> np.ndarray:
        """d vec(prediction) / d vec(theta): (H*N) x n_params."""
        feat = np.append(np.asarray(window, dtype=float).ravel(), 1.0)
        n_out = self.horizon * self.n_assets
        # prediction[k] = sum_f feat[f] * theta[f, k]
        jac = np.zeros((n_out, feat.size * n_out))
        for k in range(n_out):
            jac[k, k::n_out] = feat
        return jac

    def get_theta(self) -> np.ndarray:
        return self.theta.ravel().copy()

    def set_theta(self, flat: np.ndarray) -> None:
        self.theta = np.asarray(flat, dtype=float).reshape(self.theta.shape)


def linear_forecast(window: np.ndarray, model: LinearForecaster) -> np.ndarray:
    return model.predict(window)


def save_checkpoint(path, blocks: dict[str, np.ndarray]) -> None:
    """CSV checkpoint: one row per named parameter block,
    `name,shape,values` with an `x`-separated shape and space-separated
    row-major values."""
    with open(path, "w") as fh:
        fh.write("name,shape,values\n")
        for name, arr in blocks.items():
            arr = np.asarray(arr, dtype=float)
            shape = "x".join(str(s) for s in arr.shape)
            vals = " ".join(f"{v:.17g}" for v in arr.ravel())
            fh.write(f"{name},{shape},{vals}\n")


def load_checkpoint(path) -> dict[str, np.ndarray]:
    blocks = {}
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("name,shape,values"):
            raise ValueError("not a checkpoint file")
        for line in fh:
            name, shape, vals = line.rstrip("\n").split(",", 2)
            dims = tuple(int(s) for s in shape.split("x"))
            blocks[name] = np.array([float(v) for v in vals.split()]).reshape(dims)
    return blocks
