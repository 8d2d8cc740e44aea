"""Mean-variance optimization layer.

Covers covariance estimation from pooled historical and predicted rows (with
diagonal jitter repair), the closed-form equality-constrained solver, a
long-only active-set solver, analytic sensitivities of the optimal weights to
the mean vector and to the Cholesky factor, the decision objective J, regret,
and the gradient of J with respect to the weights.

Two risk forms coexist: the solver's quadratic (variance) form, whose
closed-form solution is

    gamma = (1' Sigma^-1 mu - 2 lam) / (1' Sigma^-1 1)
    w     = Sigma^-1 (mu - gamma 1) / (2 lam)

and the standard-deviation form lam * ||L w||_2 - mu' w used by the decision
objective. Regret is only guaranteed nonnegative when the reference weights
minimize the same form that J is evaluated with, so `regret` enforces a
matched form unless explicitly told otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

VARIANCE = "variance"
STDEV = "stdev"

_BUDGET_TOL = 1e-9
_KKT_TOL = 1e-8


class OptError(ValueError):
    pass


@dataclass(frozen=True)
class CovEstimate:
    sigma: np.ndarray  # N x N, symmetric PD after jitter
    chol: np.ndarray   # lower triangular, chol @ chol.T == sigma
    jitter: float
    k_hist: int
    h_pred: int

    @property
    def n_assets(self) -> int:
        return self.sigma.shape[0]


@dataclass(frozen=True)
class PortfolioSolution:
    w: np.ndarray
    s: float                   # ||L w||_2
    gamma: float               # budget multiplier
    active: frozenset[int] = field(default_factory=frozenset)


@dataclass(frozen=True)
class RegretReport:
    j_star: float
    j_hat: float
    delta: float
    lam: float
    risk_form: str


def _chol_with_jitter(sigma: np.ndarray):
    """Lower Cholesky factor, doubling relative diagonal jitter from 1e-10
    until factorization succeeds."""
    n = sigma.shape[0]
    scale = float(np.trace(sigma)) / n
    if scale <= 0:
        scale = 1.0
    jitter = 0.0
    delta = 1e-10
    for _ in range(200):
        try:
            L = cholesky(sigma + jitter * np.eye(n), lower=True)
            return L, jitter
        except np.linalg.LinAlgError:
            pass
        jitter = delta * scale
        delta *= 2.0
    raise OptError("could not repair covariance to positive definite")


def estimate_cov(hist: np.ndarray, pred: np.ndarray | None) -> CovEstimate:
    """Sample covariance of the row-union of historical and predicted returns
    (single pooled mean, denominator rows-1), jittered to positive definite."""
    hist = np.atleast_2d(np.asarray(hist, dtype=float))
    if pred is None or np.size(pred) == 0:
        stacked = hist
        h = 0
    else:
        pred = np.atleast_2d(np.asarray(pred, dtype=float))
        stacked = np.vstack([hist, pred])
        h = pred.shape[0]
    n_rows = stacked.shape[0]
    if n_rows < 2:
        raise OptError("need at least two rows to estimate covariance")
    centered = stacked - stacked.mean(axis=0)
    sigma = centered.T @ centered / (n_rows - 1)
    sigma = 0.5 * (sigma + sigma.T)
    L, jitter = _chol_with_jitter(sigma)
    return CovEstimate(sigma + jitter * np.eye(sigma.shape[0]), L, jitter,
                       n_rows - h, h)


def cov_from_sigma(sigma: np.ndarray) -> CovEstimate:
    """Wrap an explicit covariance matrix, applying jitter repair if needed."""
    sigma = 0.5 * (np.asarray(sigma, dtype=float) + np.asarray(sigma, dtype=float).T)
    L, jitter = _chol_with_jitter(sigma)
    return CovEstimate(sigma + jitter * np.eye(sigma.shape[0]), L, jitter, 0, 0)


def _inv_apply(cov: CovEstimate, b: np.ndarray) -> np.ndarray:
    return cho_solve((cov.chol, True), b)


def solve_closed_form(mu: np.ndarray, cov: CovEstimate, lam: float) -> PortfolioSolution:
    """Equality-constrained (budget only) minimizer of the variance form."""
    mu = np.asarray(mu, dtype=float)
    if lam <= 0:
        raise OptError("risk aversion must be positive")
    ones = np.ones_like(mu)
    a_mu = _inv_apply(cov, mu)
    a_one = _inv_apply(cov, ones)
    z = ones @ a_one
    gamma = (ones @ a_mu - 2.0 * lam) / z
    w = (a_mu - gamma * a_one) / (2.0 * lam)
    s = float(np.linalg.norm(cov.chol.T @ w))
    return PortfolioSolution(w, s, float(gamma))


def solve_box(mu: np.ndarray, cov: CovEstimate, lam: float,
              max_iter: int | None = None) -> PortfolioSolution:
    """Long-only, full-investment minimizer of the variance form.

    Active-set iteration: solve the equality-constrained problem on the free
    index set, clamp the worst bound violator, and release clamped indices
    whose multiplier goes dual-infeasible, until the KKT system holds.
    """
    mu = np.asarray(mu, dtype=float)
    n = mu.size
    if lam <= 0:
        raise OptError("risk aversion must be positive")
    sigma = cov.sigma
    max_iter = max_iter if max_iter is not None else 5 * n + 20
    clamped: set[int] = set()
    w = np.full(n, 1.0 / n)
    gamma = 0.0

    for _ in range(max_iter):
        free = sorted(set(range(n)) - clamped)
        if not free:
            raise OptError("active-set solver clamped every asset")
        sig_ff = sigma[np.ix_(free, free)]
        a = np.linalg.solve(sig_ff, np.column_stack([mu[free], np.ones(len(free))]))
        a_mu, a_one = a[:, 0], a[:, 1]
        z = a_one.sum()
        gamma = (a_mu.sum() - 2.0 * lam) / z
        w_free = (a_mu - gamma * a_one) / (2.0 * lam)

        w = np.zeros(n)
        w[free] = w_free
        if np.min(w_free) < -_BUDGET_TOL:
            clamped.add(free[int(np.argmin(w_free))])
            continue
        # dual feasibility: clamped-at-zero multipliers must be nonnegative
        grad = 2.0 * lam * (sigma @ w) - mu + gamma
        released = False
        for i in sorted(clamped, key=lambda j: grad[j]):
            if grad[i] < -_KKT_TOL:
                clamped.discard(i)
                released = True
                break
        if released:
            continue
        w = np.clip(w, 0.0, None)
        w = w / w.sum()
        s = float(np.linalg.norm(cov.chol.T @ w))
        return PortfolioSolution(w, s, float(gamma), frozenset(clamped))

    resid = float(np.abs(np.minimum(w, 0)).max())
    raise OptError(f"active-set solver did not converge; bound residual {resid:.3e}")


def _project_box_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w: sum w = 1, 0 <= w <= 1} by bisection."""
    lo = v.min() - 1.0
    hi = v.max()
    for _ in range(100):
        tau = 0.5 * (lo + hi)
        s = np.clip(v - tau, 0.0, 1.0).sum()
        if s > 1.0:
            lo = tau
        else:
            hi = tau
    return np.clip(v - 0.5 * (lo + hi), 0.0, 1.0)


def solve_stdev_box(mu: np.ndarray, cov: CovEstimate, lam: float,
                    max_iter: int = 200) -> PortfolioSolution:
    """Long-only minimizer of the standard-deviation form.

    At an optimum with risk r = sqrt(w' Sigma w) the stationarity system
    coincides with the variance form at risk aversion lam / (2 r), so the
    solution is found by a fixed point over that rescaled aversion, with each
    inner problem solved exactly by the active-set solver.
    """
    mu = np.asarray(mu, dtype=float)
    sol = solve_box(mu, cov, lam)
    lam_eff = lam / (2.0 * sol.s) if sol.s > 0 else lam
    prev_w = sol.w
    for _ in range(max_iter):
        sol = solve_box(mu, cov, lam_eff)
        if sol.s <= 0:
            raise OptError("degenerate risk in stdev-form solve")
        target = lam / (2.0 * sol.s)
        if (abs(lam_eff - target) <= 1e-15 * max(1.0, target)
                and np.max(np.abs(sol.w - prev_w)) <= 1e-14):
            break
        prev_w = sol.w
        # geometric damping keeps the fixed point from oscillating
        lam_eff = float(np.sqrt(lam_eff * target))
    return PortfolioSolution(sol.w, sol.s, sol.gamma, sol.active)


def solve(mu: np.ndarray, cov: CovEstimate, lam: float, risk_form: str = VARIANCE,
          box: bool = True) -> PortfolioSolution:
    if risk_form == VARIANCE:
        return solve_box(mu, cov, lam) if box else solve_closed_form(mu, cov, lam)
    if risk_form == STDEV:
        if not box:
            raise OptError("stdev form requires box constraints (may be unbounded)")
        return solve_stdev_box(mu, cov, lam)
    raise OptError(f"unknown risk form {risk_form!r}")


def sensitivity_mu(cov: CovEstimate, lam: float) -> np.ndarray:
    """d w / d mu of the closed-form solver:
    (Sigma^-1 - Sigma^-1 1 1' Sigma^-1 / (1' Sigma^-1 1)) / (2 lam)."""
    n = cov.n_assets
    ones = np.ones(n)
    a = _inv_apply(cov, np.eye(n))
    a_one = a @ ones
    z = ones @ a_one
    return (a - np.outer(a_one, a_one) / z) / (2.0 * lam)


def sensitivity_mu_reduced(cov: CovEstimate, lam: float,
                           active: frozenset[int]) -> np.ndarray:
    """Active-set treatment: differentiate the problem restricted to the free
    indices; rows and columns of clamped indices are zero."""
    n = cov.n_assets
    free = sorted(set(range(n)) - set(active))
    sig_ff = cov.sigma[np.ix_(free, free)]
    a = np.linalg.inv(sig_ff)
    a_one = a.sum(axis=1)
    z = a_one.sum()
    red = (a - np.outer(a_one, a_one) / z) / (2.0 * lam)
    out = np.zeros((n, n))
    out[np.ix_(free, free)] = red
    return out


def sensitivity_L_jvp(mu: np.ndarray, cov: CovEstimate, lam: float,
                      dL: np.ndarray) -> np.ndarray:
    """Directional derivative of the closed-form weights along a
    lower-triangular perturbation of the Cholesky factor."""
    dL = np.asarray(dL, dtype=float)
    if np.any(np.triu(dL, 1) != 0):
        raise OptError("direction must be lower triangular")
    mu = np.asarray(mu, dtype=float)
    n = mu.size
    ones = np.ones(n)
    L = cov.chol
    d_sigma = dL @ L.T + L @ dL.T

    a_mu = _inv_apply(cov, mu)
    a_one = _inv_apply(cov, ones)
    z = ones @ a_one
    g = ones @ a_mu
    gamma = (g - 2.0 * lam) / z

    da_mu = -_inv_apply(cov, d_sigma @ a_mu)
    da_one = -_inv_apply(cov, d_sigma @ a_one)
    dg = ones @ da_mu
    dz = ones @ da_one
    dgamma = (dg * z - (g - 2.0 * lam) * dz) / z**2
    return (da_mu - gamma * da_one - dgamma * a_one) / (2.0 * lam)


def chol_jvp(L: np.ndarray, d_sigma: np.ndarray) -> np.ndarray:
    """Forward-mode differential of the Cholesky factorization:
    dL = L * Phi(L^-1 dSigma L^-T), Phi = lower triangle with halved diagonal."""
    m = solve_triangular(L, d_sigma, lower=True)
    m = solve_triangular(L, m.T, lower=True).T
    phi = np.tril(m)
    np.fill_diagonal(phi, 0.5 * np.diag(m))
    return L @ phi


def objective_J(w: np.ndarray, mu_star: np.ndarray, chol_star: np.ndarray,
                lam: float, risk_form: str = STDEV) -> float:
    """Decision objective evaluated at true parameters."""
    w = np.asarray(w, dtype=float)
    risk = float(np.linalg.norm(chol_star.T @ w))
    if risk_form == STDEV:
        return lam * risk - float(mu_star @ w)
    if risk_form == VARIANCE:
        return lam * risk**2 - float(mu_star @ w)
    raise OptError(f"unknown risk form {risk_form!r}")


def regret(w_hat: np.ndarray, w_star: np.ndarray, mu_star: np.ndarray,
           chol_star: np.ndarray, lam: float, risk_form: str = STDEV,
           allow_mixed_forms: bool = False) -> RegretReport:
    """Objective gap between the predicted-parameter weights and the reference
    optimum, both evaluated at the true parameters."""
    j_star = objective_J(w_star, mu_star, chol_star, lam, risk_form)
    j_hat = objective_J(w_hat, mu_star, chol_star, lam, risk_form)
    delta = j_hat - j_star
    if not allow_mixed_forms and delta < -_BUDGET_TOL:
        raise OptError(
            f"negative regret {delta:.3e}: reference weights do not minimize "
            f"the {risk_form} objective (mixed risk forms?)")
    return RegretReport(j_star, j_hat, delta, lam, risk_form)


def grad_J_w(w_hat: np.ndarray, mu_star: np.ndarray, chol_star: np.ndarray,
             lam: float, eps_grad: float = 1e-12) -> np.ndarray:
    """Gradient of the stdev-form objective with respect to the weights:
    lam * L' (L w) / ||L w|| - mu."""
    w_hat = np.asarray(w_hat, dtype=float)
    lw = chol_star.T @ w_hat
    risk = float(np.linalg.norm(lw))
    if risk <= eps_grad:
        raise OptError("degenerate risk")
    return lam * (chol_star @ lw) / risk - np.asarray(mu_star, dtype=float)
