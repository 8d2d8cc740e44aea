"""Rolling-horizon backtesting, the eight performance metrics, regime slices,
gradient-magnitude grouping, and the two-asset amplification demonstration.

At each rebalance date the engine normalizes nothing itself: the model owns
its preprocessing and returns denormalized forecasts. The engine estimates a
covariance from pooled history and forecasts, solves the long-only problem,
holds for the stride, and records realized portfolio returns together with
the weight-sensitivity matrices needed for the grouping analysis.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import optlayer as ol
from .data import ReturnPanel

LAMBDA_GRID = (0.0145, 0.2656, 0.9545, 2.4305, 3.4623)
DEFAULT_LAMBDA = 0.9545  # balanced risk profile

METRIC_NAMES = ("Ret", "Std", "SR", "SOR", "MDD", "VaR95", "RoV", "Wealth")


class BacktestError(ValueError):
    pass


@dataclass(frozen=True)
class BacktestConfig:
    lookback: int = 21
    horizon: int = 1
    cov_history: int = 63  # about three months of trading days
    stride: int | None = None  # default: hold the horizon
    lam: float = DEFAULT_LAMBDA
    risk_form: str = ol.VARIANCE
    period_per_year: int = 252
    risk_free_annual: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.lookback, self.horizon, self.cov_history) < 1 or self.lam <= 0:
            raise BacktestError("lookback, horizon, cov_history must be >= 1 and lam > 0")

    @property
    def effective_stride(self) -> int:
        return self.stride if self.stride else self.horizon


@dataclass
class BacktestReport:
    dates: list[dt.date]                 # dates of realized portfolio returns
    portfolio_returns: np.ndarray
    rebalance_dates: list[dt.date]
    weights: np.ndarray                  # n_rebalances x N
    tickers: list[str]
    metrics: dict
    config: BacktestConfig
    seed: int
    sensitivities: list[np.ndarray] = field(default_factory=list)  # dw/dmu per rebalance
    chol_sensitivity_norms: list[np.ndarray] = field(default_factory=list)
    predictions: list[np.ndarray] = field(default_factory=list)    # first-step forecasts
    actuals: list[np.ndarray] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "metrics": self.metrics,
            "config": {k: getattr(self.config, k) for k in (
                "lookback", "horizon", "cov_history", "stride", "lam",
                "risk_form", "period_per_year", "risk_free_annual")},
            "seed": self.seed,
            "n_rebalances": len(self.rebalance_dates),
            "start": self.dates[0].isoformat(),
            "end": self.dates[-1].isoformat(),
        }

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(
            json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")
        pd.DataFrame({"date": [d.isoformat() for d in self.dates],
                      "portfolio_return": self.portfolio_returns}
                     ).to_csv(out_dir / "returns.csv", index=False, float_format="%.17g")
        wdf = pd.DataFrame(self.weights, columns=self.tickers)
        wdf.insert(0, "date", [d.isoformat() for d in self.rebalance_dates])
        wdf.to_csv(out_dir / "weights.csv", index=False, float_format="%.17g")
        wealth = np.cumprod(1.0 + self.portfolio_returns)
        peak = np.maximum.accumulate(wealth)
        pd.DataFrame({"date": [d.isoformat() for d in self.dates],
                      "wealth": wealth,
                      "drawdown": 1.0 - wealth / peak}
                     ).to_csv(out_dir / "wealth.csv", index=False, float_format="%.17g")


@dataclass(frozen=True)
class RegimeWindow:
    name: str
    start: dt.date | None  # None = unbounded (ALL)
    end: dt.date | None


REGIMES = {
    "COVID": RegimeWindow("COVID", dt.date(2020, 3, 1), dt.date(2020, 6, 30)),
    "ICSA": RegimeWindow("ICSA", dt.date(2020, 3, 1), dt.date(2020, 8, 31)),
    "HSN1": RegimeWindow("HSN1", dt.date(2022, 6, 1), dt.date(2022, 11, 30)),
    "UMCS": RegimeWindow("UMCS", dt.date(2022, 5, 1), dt.date(2022, 12, 31)),
    "ALL": RegimeWindow("ALL", None, None),
}


def run_backtest(panel: ReturnPanel, model, cfg: BacktestConfig) -> BacktestReport:
    r = panel.returns
    t_total, n = r.shape
    lb = max(cfg.lookback, cfg.cov_history)
    stride = cfg.effective_stride
    if t_total < lb + stride:
        raise BacktestError("panel too short for one backtest window")

    dates, port_rets = [], []
    reb_dates, weights = [], []
    sens, chol_sens, preds, acts = [], [], [], []
    for t in range(lb, t_total - stride + 1, stride):
        window = r[t - cfg.lookback:t]
        if hasattr(model, "predict_at"):
            pred = model.predict_at(t)
        else:
            pred = model.predict(window)
        cov = ol.estimate_cov(r[t - cfg.cov_history:t], pred)
        sol = ol.solve_box(pred[0], cov, cfg.lam)
        if sol.active:
            sens.append(ol.sensitivity_mu_reduced(cov, cfg.lam, sol.active))
        else:
            sens.append(ol.sensitivity_mu(cov, cfg.lam))
        chol_sens.append(_chol_direction_norms(pred[0], cov, cfg.lam))
        reb_dates.append(panel.dates[t - 1])
        weights.append(sol.w)
        preds.append(pred[0].copy())
        acts.append(r[t].copy())
        for j in range(stride):
            dates.append(panel.dates[t + j])
            port_rets.append(float(r[t + j] @ sol.w))

    port_rets = np.asarray(port_rets)
    metrics = compute_metrics(dates, port_rets, cfg)
    return BacktestReport(dates, port_rets, reb_dates, np.stack(weights),
                          panel.tickers, metrics, cfg, cfg.seed,
                          sens, chol_sens, preds, acts)


def _chol_direction_norms(mu, cov: ol.CovEstimate, lam) -> np.ndarray:
    """Per-asset norms of the weight response over canonical lower-triangular
    Cholesky directions."""
    n = cov.n_assets
    acc = np.zeros(n)
    for a in range(n):
        for b in range(a + 1):
            d = np.zeros((n, n))
            d[a, b] = 1.0
            acc += np.abs(ol.sensitivity_L_jvp(mu, cov, lam, d))
    return acc


def _monthly_compound(dates, returns) -> np.ndarray:
    s = pd.Series(returns, index=pd.to_datetime([d.isoformat() for d in dates]))
    return s.groupby([s.index.year, s.index.month]).apply(
        lambda g: float(np.prod(1.0 + g) - 1.0)).to_numpy()


def compute_metrics(dates, returns, cfg: BacktestConfig) -> dict:
    """Eight-metric summary. SR/SOR/RoV are None when their denominators
    vanish; VaR uses calendar-month compounded returns."""
    returns = np.asarray(returns, dtype=float)
    if returns.size < 2:
        raise BacktestError("need at least two portfolio returns")
    ppy = cfg.period_per_year
    rf = cfg.risk_free_annual
    ret = float(returns.mean() * ppy)
    std = float(returns.std(ddof=1) * math.sqrt(ppy))
    sr = (ret - rf) / std if std > 0 else None
    downside = returns[returns < 0]
    dd = float(np.sqrt(np.mean(downside**2)) * math.sqrt(ppy)) if downside.size else 0.0
    sor = (ret - rf) / dd if dd > 0 else None
    wealth_curve = np.cumprod(1.0 + returns)
    peak = np.maximum.accumulate(wealth_curve)
    mdd = float(np.max(1.0 - wealth_curve / peak))
    monthly = _monthly_compound(dates, returns)
    if monthly.size < 1:
        raise BacktestError("series shorter than one month; VaR undefined")
    var95 = float(-np.percentile(monthly, 5))
    rf_month = rf / 12.0
    rov = float(np.mean(monthly - rf_month) / var95) if var95 != 0 else None
    return {
        "Ret": ret, "Std": std, "SR": sr, "SOR": sor, "MDD": mdd,
        "VaR95": var95, "RoV": rov, "Wealth": float(wealth_curve[-1]),
    }


def regime_slice(report: BacktestReport, regime: RegimeWindow) -> dict:
    if regime.start is None and regime.end is None:
        return compute_metrics(report.dates, report.portfolio_returns, report.config)
    mask = [(regime.start is None or d >= regime.start)
            and (regime.end is None or d <= regime.end) for d in report.dates]
    if not any(mask):
        raise BacktestError(f"empty overlap with regime {regime.name}")
    dates = [d for d, m in zip(report.dates, mask) if m]
    rets = report.portfolio_returns[np.asarray(mask)]
    return compute_metrics(dates, rets, report.config)


@dataclass(frozen=True)
class SensitivityGrouping:
    regime: str
    x_pct: int
    source: str  # mean | chol
    bottom: tuple[int, ...]
    top: tuple[int, ...]
    mse_diff: float  # bottom - top
    mae_diff: float


def sensitivity_grouping(report: BacktestReport, x_pcts=(10, 20, 30),
                         regimes=None) -> list[SensitivityGrouping]:
    """Bottom-minus-top forecast error differences for assets grouped by
    time-averaged sensitivity magnitude."""
    if not report.sensitivities:
        raise BacktestError("backtest recorded no sensitivities")
    regimes = regimes if regimes is not None else REGIMES
    n = len(report.tickers)
    preds = np.stack(report.predictions)
    acts = np.stack(report.actuals)
    mean_scores = np.mean([np.abs(s).sum(axis=1) for s in report.sensitivities], axis=0)
    chol_scores = np.mean(report.chol_sensitivity_norms, axis=0)

    out = []
    for rname, regime in regimes.items():
        if regime.start is None and regime.end is None:
            mask = np.ones(len(report.rebalance_dates), dtype=bool)
        else:
            mask = np.array([(regime.start is None or d >= regime.start)
                             and (regime.end is None or d <= regime.end)
                             for d in report.rebalance_dates])
        if not mask.any():
            continue
        err = preds[mask] - acts[mask]
        per_asset_mse = np.mean(err**2, axis=0)
        per_asset_mae = np.mean(np.abs(err), axis=0)
        for source, scores in (("mean", mean_scores), ("chol", chol_scores)):
            order = np.argsort(scores, kind="stable")
            for x in x_pcts:
                k = math.ceil(x / 100.0 * n)
                if 2 * k > n:
                    continue
                bottom = tuple(int(i) for i in order[:k])
                top = tuple(int(i) for i in order[-k:])
                out.append(SensitivityGrouping(
                    rname, x, source, bottom, top,
                    float(per_asset_mse[list(bottom)].mean()
                          - per_asset_mse[list(top)].mean()),
                    float(per_asset_mae[list(bottom)].mean()
                          - per_asset_mae[list(top)].mean())))
    return out


def prop1_demo(mu1: float, mu2: float, lam: float, k_max: int = 10**6):
    """Two-asset amplification trace: a mean-vector sequence whose distance
    to the truth shrinks toward a fixed offset while the induced weight gap
    (distance of the first weight from uniform 1/2) approaches that offset
    divided by 4*lam.

    Returns (rows, summary). Each row: (k, l2_dist, w1_k, w1_star, gap) with
    gap = w1_k - 1/2, decreasing monotonically to delta / (4 lam).
    """
    if mu1 <= mu2:
        raise ValueError("mu1 must exceed mu2")
    if lam <= 0:
        raise ValueError("lam must be positive")
    delta = (mu1 - mu2) / 2.0
    w1_star = 0.5 + (mu1 - mu2) / (4.0 * lam)
    ks = []
    k = 1
    while k < k_max:
        ks.append(k)
        k *= 2
    ks.append(k_max)
    rows = []
    for k in ks:
        dist = abs(1.0 / k - delta)
        w1_k = 0.5 + (delta + 1.0 / k) / (4.0 * lam)
        rows.append((k, dist, w1_k, w1_star, w1_k - 0.5))
    summary = {
        "delta": delta,
        "w1_star": w1_star,
        "limiting_w1": 0.5 + delta / (4.0 * lam),
        "limiting_gap": delta / (4.0 * lam),
        "limiting_distance": delta,
    }
    return rows, summary
