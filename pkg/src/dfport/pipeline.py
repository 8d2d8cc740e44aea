"""End-to-end forecast models exposing a common `predict(window) -> HxN`
interface for the backtester and trainer.

`ContextForecastModel` is the full stack: instance normalization, multi-scale
decomposition, prompt statistics and embeddings, prob-sparse cross-attention,
contextual encoding, linear head, denormalization. Its trainable surface is
the forecast head, for which the prediction Jacobian is analytic.

`ZeroForecaster` and `OracleForecaster` are baselines for paired backtests.
"""

from __future__ import annotations

import numpy as np

from . import attention, prompts
from .data import MacroPanel, SectorMap
from .forecaster import ForecastHead, IdentityEncoder, forecast
from .preprocess import DEFAULT_EPSILON, DEFAULT_KERNELS, decompose, normalize


class ZeroForecaster:
    """Predicts zero excess returns everywhere."""

    def __init__(self, n_assets: int, horizon: int):
        self.n_assets = n_assets
        self.horizon = horizon

    def predict(self, window: np.ndarray) -> np.ndarray:
        return np.zeros((self.horizon, self.n_assets))


class OracleForecaster:
    """Feeds back the true future rows of a return panel; benchmarking only."""

    def __init__(self, returns: np.ndarray, horizon: int):
        self.returns = np.asarray(returns, dtype=float)
        self.horizon = horizon

    def predict_at(self, t: int) -> np.ndarray:
        return self.returns[t:t + self.horizon]


class ContextForecastModel:
    """Full forecasting stack with a trainable linear head."""

    def __init__(self, tickers: list[str], sectors: SectorMap, macro: MacroPanel,
                 horizon: int, lookback: int, d_llm: int = 24, heads: int = 4,
                 sample_const: float = 5.0, seed: int = 0,
                 epsilon: float = DEFAULT_EPSILON, kernels=DEFAULT_KERNELS,
                 encoder=None, provider=None):
        self.tickers = tickers
        self.sectors = sectors
        self.horizon = horizon
        self.lookback = lookback
        self.epsilon = epsilon
        self.kernels = tuple(kernels)
        self.seed = seed
        self.encoder = encoder if encoder is not None else IdentityEncoder()
        self.provider = provider if provider is not None else \
            prompts.HashEmbeddingProvider(d_llm)
        self.params = attention.AttnParams.init(lookback, d_llm, heads, seed,
                                                sample_const)
        rng = np.random.default_rng(seed + 1)
        self.head = ForecastHead(rng.normal(scale=1.0 / np.sqrt(d_llm),
                                            size=(d_llm, horizon)))
        # macro prompts are window-independent; embed once
        macro_docs = prompts.render_macro_prompts(prompts.macro_stats(macro))
        self.e_macro = prompts.embed(macro_docs, self.provider)

    def _contexts(self, window: np.ndarray):
        normalized, stats = normalize(window, self.epsilon)
        dec = decompose(normalized, self.kernels)
        pair = prompts.pair_counts(window, self.tickers, self.sectors)
        stock_docs = prompts.render_stock_prompts(pair, self.tickers, self.sectors)
        e_stocks = prompts.embed(stock_docs, self.provider)
        c_market, c_stock = attention.fuse_contexts(
            dec.trend, dec.residual, self.e_macro, e_stocks, self.params,
            seed=self.seed)
        return c_market, c_stock, stats

    def predict(self, window: np.ndarray) -> np.ndarray:
        c_market, c_stock, stats = self._contexts(window)
        return forecast(c_market, c_stock, self.encoder, self.head, stats)

    # head-only trainable surface
    def get_theta(self) -> np.ndarray:
        return self.head.wf.ravel().copy()

    def set_theta(self, flat: np.ndarray) -> None:
        self.head.wf = np.asarray(flat, dtype=float).reshape(self.head.wf.shape)

    def pred_jacobian(self, window: np.ndarray) -> np.ndarray:
        """d vec(prediction) / d vec(wf); prediction[h, i] = z[i] @ wf[:, h]
        * sigma[i] + mu[i] with z the fused encoded context."""
        c_market, c_stock, stats = self._contexts(window)
        z = self.encoder.encode(c_market) + self.encoder.encode(c_stock)  # N x d
        n, d = z.shape
        h_steps = self.horizon
        jac = np.zeros((h_steps * n, d * h_steps))
        for h in range(h_steps):
            for i in range(n):
                out_idx = h * n + i
                # wf is d x H, raveled row-major: wf[k, h] at k * H + h
                jac[out_idx, h::h_steps] = z[i] * stats.sigma[i]
        return jac
