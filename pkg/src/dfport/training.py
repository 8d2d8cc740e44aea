"""Hybrid loss (prediction MSE + decision regret), its gradient through the
optimization layer, and a deterministic Adam training loop.

The decision term is differentiated with the analytic sensitivities of the
closed-form solver: the mean path uses the weight-vs-mean sensitivity matrix,
the covariance path propagates each prediction entry through the pooled
sample covariance, the diagonal jitter, the Cholesky factorization (forward
differential) and the Cholesky-direction JVP of the weights. The absolute
regret is smoothed near zero with a pseudo-Huber profile.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import optlayer as ol

DEFAULT_BETA = 0.4
DEFAULT_HUBER_EPS = 1e-8


@dataclass(frozen=True)
class HybridLossConfig:
    beta: float = DEFAULT_BETA
    lam: float = 0.9545
    risk_form: str = ol.STDEV
    huber_eps: float = DEFAULT_HUBER_EPS

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.lam <= 0:
            raise ValueError("lam must be positive")


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 50
    base_step: float = 1e-4
    patience: int = 5
    batch_size: int = 16
    seed: int = 0
    halve_every: int = 5  # halve the step after this many non-improving epochs

    def __post_init__(self):
        if min(self.max_epochs, self.batch_size) < 1 or self.base_step <= 0:
            raise ValueError("training config values must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    mse: float
    decision: float
    total: float


@dataclass(frozen=True)
class TrainSample:
    window: np.ndarray   # L x N model input
    hist: np.ndarray     # K x N covariance history
    actuals: np.ndarray  # H x N realized returns


@dataclass
class TrainHistory:
    epochs: list[dict] = field(default_factory=list)
    stopped_epoch: int | None = None
    best_epoch: int | None = None


def loss_mse(pred: np.ndarray, actual: np.ndarray) -> float:
    pred, actual = np.asarray(pred, float), np.asarray(actual, float)
    if pred.shape != actual.shape:
        raise ValueError("prediction/actual shape mismatch")
    h, n = pred.shape
    return float(np.sum((pred - actual) ** 2)) / (n * h)


def loss_decision(regrets: list[ol.RegretReport], n_assets: int) -> float:
    if not regrets:
        raise ValueError("no regret reports")
    return sum(abs(r.delta) for r in regrets) / (n_assets * len(regrets))


def loss_hybrid(mse: float, decision: float, cfg: HybridLossConfig) -> LossBreakdown:
    return LossBreakdown(mse, decision, cfg.beta * mse + (1.0 - cfg.beta) * decision)


def _grad_J_w_any_form(w, mu_star, chol_star, lam, risk_form):
    if risk_form == ol.STDEV:
        return ol.grad_J_w(w, mu_star, chol_star, lam)
    # variance form: 2 lam Sigma* w - mu*
    return 2.0 * lam * (chol_star @ (chol_star.T @ w)) - np.asarray(mu_star, float)


def _decision_terms(pred, hist, actuals, cfg: HybridLossConfig):
    """Per-horizon regret reports plus intermediates reused by the gradient."""
    h_steps, _ = pred.shape
    terms = []
    for h in range(1, h_steps + 1):
        cov_hat = ol.estimate_cov(hist, pred[:h])
        w_hat = ol.solve_closed_form(pred[h - 1], cov_hat, cfg.lam).w
        cov_star = ol.estimate_cov(hist, actuals[:h])
        w_star = ol.solve_closed_form(actuals[h - 1], cov_star, cfg.lam).w
        rep = ol.regret(w_hat, w_star, actuals[h - 1], cov_star.chol, cfg.lam,
                        cfg.risk_form, allow_mixed_forms=True)
        terms.append((rep, cov_hat, w_hat, cov_star))
    return terms


def sample_loss(model, sample: TrainSample, cfg: HybridLossConfig) -> LossBreakdown:
    pred = model.predict(sample.window)
    mse = loss_mse(pred, sample.actuals)
    terms = _decision_terms(pred, sample.hist, sample.actuals, cfg)
    dec = loss_decision([t[0] for t in terms], pred.shape[1])
    return loss_hybrid(mse, dec, cfg)


def _cov_row_jvp(stacked: np.ndarray, row: int, col: int, jitter: float):
    """d(jittered covariance) for a unit bump of stacked[row, col]."""
    n_rows, n = stacked.shape
    centered = stacked[row] - stacked.mean(axis=0)
    d_sigma = np.zeros((n, n))
    d_sigma[col, :] += centered / (n_rows - 1)
    d_sigma[:, col] += centered / (n_rows - 1)
    if jitter > 0:
        raw_trace = float(np.trace(
            (stacked - stacked.mean(axis=0)).T @ (stacked - stacked.mean(axis=0))
        )) / (n_rows - 1)
        if raw_trace > 0:
            d_sigma += (jitter / raw_trace) * np.trace(d_sigma) * np.eye(n)
    return d_sigma


def grad_hybrid_theta(model, sample: TrainSample, cfg: HybridLossConfig):
    """Gradient of the hybrid loss over the model parameters, via the
    closed-form optimization path. Returns (gradient, LossBreakdown)."""
    pred = model.predict(sample.window)
    h_steps, n = pred.shape
    actuals = sample.actuals
    mse = loss_mse(pred, actuals)
    terms = _decision_terms(pred, sample.hist, actuals, cfg)
    dec = loss_decision([t[0] for t in terms], n)
    breakdown = loss_hybrid(mse, dec, cfg)

    d_pred = cfg.beta * 2.0 * (pred - actuals) / (n * h_steps)

    if cfg.beta < 1.0:
        for h, (rep, cov_hat, w_hat, cov_star) in enumerate(terms, start=1):
            scale = (1.0 - cfg.beta) / (n * h_steps)
            dhub = rep.delta / np.sqrt(rep.delta**2 + cfg.huber_eps**2)
            g_j = scale * dhub * _grad_J_w_any_form(
                w_hat, actuals[h - 1], cov_star.chol, cfg.lam, cfg.risk_form)
            # mean path: sensitivity matrix is symmetric
            d_pred[h - 1] += ol.sensitivity_mu(cov_hat, cfg.lam) @ g_j
            # covariance path, entry by entry of the predicted rows
            stacked = np.vstack([sample.hist, pred[:h]])
            k = sample.hist.shape[0]
            for g_row in range(h):
                for i in range(n):
                    d_sigma = _cov_row_jvp(stacked, k + g_row, i, cov_hat.jitter)
                    d_l = ol.chol_jvp(cov_hat.chol, d_sigma)
                    d_w = ol.sensitivity_L_jvp(pred[h - 1], cov_hat, cfg.lam, d_l)
                    d_pred[g_row, i] += float(g_j @ d_w)

    grad = model.pred_jacobian(sample.window).T @ d_pred.ravel()
    return grad, breakdown


def _mean_loss(model, samples, cfg):
    parts = [sample_loss(model, s, cfg) for s in samples]
    return LossBreakdown(
        float(np.mean([p.mse for p in parts])),
        float(np.mean([p.decision for p in parts])),
        float(np.mean([p.total for p in parts])),
    )


def train(model, train_samples: list[TrainSample], val_samples: list[TrainSample],
          cfg: TrainConfig, loss_cfg: HybridLossConfig):
    """Adam with bias correction, mini-batches over rolling windows, early
    stopping on the validation composite loss, and step halving after
    `halve_every` non-improving epochs. Deterministic under a fixed seed."""
    if not train_samples:
        raise ValueError("no training samples")
    if not val_samples:
        raise ValueError("early stopping requires validation samples")
    rng = np.random.default_rng(cfg.seed)
    theta = model.get_theta()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = cfg.base_step
    t_adam = 0

    history = TrainHistory()
    best_val = np.inf
    best_theta = theta.copy()
    bad_epochs = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_samples))
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_samples[i] for i in order[start:start + cfg.batch_size]]
            grads = []
            for s in batch:
                g, _ = grad_hybrid_theta(model, s, loss_cfg)
                grads.append(g)
            g = np.mean(grads, axis=0)
            t_adam += 1
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1**t_adam)
            v_hat = v / (1 - b2**t_adam)
            theta = theta - step * m_hat / (np.sqrt(v_hat) + eps)
            model.set_theta(theta)

        train_loss = _mean_loss(model, train_samples, loss_cfg)
        val_loss = _mean_loss(model, val_samples, loss_cfg)
        history.epochs.append({
            "epoch": epoch,
            "train": train_loss.__dict__,
            "val": val_loss.__dict__,
            "step": step,
        })
        if val_loss.total < best_val - 1e-15:
            best_val = val_loss.total
            best_theta = theta.copy()
            history.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if cfg.halve_every and bad_epochs % cfg.halve_every == 0:
                step *= 0.5
            if bad_epochs > cfg.patience:
                history.stopped_epoch = epoch
                break

    model.set_theta(best_theta)
    return model, history
