"""Command-line entry point.

Commands: ingest, train, backtest, verify-gradients, prop1-demo,
analyze-sensitivity. Exit codes: 0 success, 1 validation error,
2 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import optlayer as ol
from . import training as tr
from .backtest import (BacktestConfig, BacktestError, METRIC_NAMES,
                       prop1_demo, run_backtest, sensitivity_grouping,
                       SensitivityGrouping)
from .config import ConfigError, RunConfig, load_config
from .data import DataError, load_macro, load_prices, load_sectors, to_excess_returns
from .forecaster import LinearForecaster, load_checkpoint, save_checkpoint
from .pipeline import ContextForecastModel, ZeroForecaster

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_VERIFICATION = 2


def _load_run_config(args) -> RunConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    cfg = load_config(args.config, overrides)
    cfg.validate()
    return cfg


def _load_panel(cfg: RunConfig):
    prices = load_prices(cfg.paths.prices)
    return to_excess_returns(prices, cfg.backtest.risk_free_period)


def _build_model(cfg: RunConfig, panel):
    n = len(panel.tickers)
    bt = cfg.backtest
    if cfg.model.kind == "zero":
        return ZeroForecaster(n, bt.horizon)
    if cfg.model.kind == "linear":
        model = LinearForecaster.zeros(bt.lookback, n, bt.horizon)
        if cfg.paths.checkpoint and Path(cfg.paths.checkpoint).exists():
            model.set_theta(load_checkpoint(cfg.paths.checkpoint)["theta"].ravel())
        return model
    sectors = load_sectors(cfg.paths.sectors)
    macro = load_macro(cfg.paths.macro)
    provider = None
    if cfg.paths.embeddings:
        from .prompts import FileEmbeddingProvider
        provider = FileEmbeddingProvider(cfg.paths.embeddings)
    return ContextForecastModel(
        panel.tickers, sectors, macro, bt.horizon, bt.lookback,
        d_llm=cfg.attention.d_llm, heads=cfg.attention.heads,
        sample_const=cfg.attention.sample_const, seed=cfg.seed,
        epsilon=cfg.preprocess.epsilon, kernels=cfg.preprocess.kernels,
        provider=provider)


def _backtest_config(cfg: RunConfig) -> BacktestConfig:
    bt = cfg.backtest
    return BacktestConfig(
        lookback=bt.lookback, horizon=bt.horizon, cov_history=bt.cov_history,
        stride=bt.stride, lam=cfg.loss.lam, period_per_year=bt.period_per_year,
        risk_free_annual=bt.risk_free_annual, seed=cfg.seed)


def _print_metrics(metrics: dict) -> None:
    print("  ".join(f"{k}={metrics[k]:.6f}" if metrics[k] is not None
                    else f"{k}=missing" for k in METRIC_NAMES))


def cmd_ingest(args) -> int:
    cfg = _load_run_config(args)
    panel = _load_panel(cfg)
    macro = load_macro(cfg.paths.macro)
    sectors = load_sectors(cfg.paths.sectors)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    panel.to_csv(out / "returns.csv")
    print(f"returns: {panel.returns.shape[0]} rows x {len(panel.tickers)} assets "
          f"({panel.dates[0]}..{panel.dates[-1]})")
    print(f"macro: {len(macro.series)} series; sectors: {len(sectors.sectors)}")
    return EXIT_OK


def _rolling_samples(panel, cfg: RunConfig):
    bt = cfg.backtest
    r = panel.returns
    start = max(bt.lookback, bt.cov_history)
    samples = []
    for t in range(start, r.shape[0] - bt.horizon + 1):
        samples.append(tr.TrainSample(
            r[t - bt.lookback:t], r[t - bt.cov_history:t],
            r[t:t + bt.horizon]))
    if len(samples) > cfg.train.max_windows:
        samples = samples[-cfg.train.max_windows:]
    return samples


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    panel = _load_panel(cfg)
    samples = _rolling_samples(panel, cfg)
    n_val = max(1, int(len(samples) * cfg.train.val_fraction))
    train_s, val_s = samples[:-n_val], samples[-n_val:]
    if not train_s:
        print("error: not enough windows to train", file=sys.stderr)
        return EXIT_VALIDATION

    if cfg.model.kind == "context":
        model = _build_model(cfg, panel)
    else:
        model = LinearForecaster.zeros(cfg.backtest.lookback,
                                       len(panel.tickers), cfg.backtest.horizon)
    loss_cfg = tr.HybridLossConfig(cfg.loss.beta, cfg.loss.lam, cfg.loss.risk_form)
    train_cfg = tr.TrainConfig(cfg.train.max_epochs, cfg.train.base_step,
                               cfg.train.patience, cfg.train.batch_size, cfg.seed)
    model, history = tr.train(model, train_s, val_s, train_cfg, loss_cfg)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.csv", {"theta": model.get_theta()})
    manifest = {
        "config": cfg.to_flat_dict(),
        "seed": cfg.seed,
        "n_train": len(train_s),
        "n_val": len(val_s),
        "epochs": history.epochs,
        "best_epoch": history.best_epoch,
        "early_stop_epoch": history.stopped_epoch,
    }
    (out / "train_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    last = history.epochs[-1]
    print(f"trained {len(history.epochs)} epochs; "
          f"best epoch {history.best_epoch}; "
          f"final val total {last['val']['total']:.6g}")
    return EXIT_OK


def cmd_backtest(args) -> int:
    cfg = _load_run_config(args)
    panel = _load_panel(cfg)
    model = _build_model(cfg, panel)
    report = run_backtest(panel, model, _backtest_config(cfg))
    out = Path(cfg.out)
    report.write(out)
    np.savez(out / "recordings.npz",
             sensitivities=np.stack(report.sensitivities),
             chol_norms=np.stack(report.chol_sensitivity_norms),
             predictions=np.stack(report.predictions),
             actuals=np.stack(report.actuals),
             rebalance_dates=np.array([d.isoformat() for d in report.rebalance_dates]))
    _print_metrics(report.metrics)
    return EXIT_OK


def _fd_suite(seed: int = 0):
    """Finite-difference verification of the four analytic gradient paths.

    Returns {check name: max relative error}.
    """
    rng = np.random.default_rng(seed)
    errs = {}

    # weight sensitivity to the mean vector
    worst = 0.0
    for _ in range(25):
        n = int(rng.integers(2, 11))
        a = rng.standard_normal((n, n))
        cov = ol.cov_from_sigma(a @ a.T + n * np.eye(n))
        mu = rng.standard_normal(n)
        lam = float(rng.uniform(0.2, 3.0))
        analytic = ol.sensitivity_mu(cov, lam)
        eps = 1e-6
        fd = np.zeros((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = eps
            fd[:, j] = (ol.solve_closed_form(mu + e, cov, lam).w
                        - ol.solve_closed_form(mu - e, cov, lam).w) / (2 * eps)
        worst = max(worst, np.max(np.abs(analytic - fd)) / np.max(np.abs(fd)))
    errs["sensitivity_mu"] = worst

    # weight response to Cholesky-factor directions
    worst = 0.0
    for _ in range(25):
        n = int(rng.integers(2, 11))
        a = rng.standard_normal((n, n))
        cov = ol.cov_from_sigma(a @ a.T + n * np.eye(n))
        mu = rng.standard_normal(n)
        lam = float(rng.uniform(0.2, 3.0))
        d_l = np.tril(rng.standard_normal((n, n)))
        dw = ol.sensitivity_L_jvp(mu, cov, lam, d_l)
        eps = 1e-6

        def w_of(lmat):
            c = ol.CovEstimate(lmat @ lmat.T, lmat, 0.0, 0, 0)
            return ol.solve_closed_form(mu, c, lam).w

        fd = (w_of(cov.chol + eps * d_l) - w_of(cov.chol - eps * d_l)) / (2 * eps)
        worst = max(worst, np.max(np.abs(dw - fd)) / np.max(np.abs(fd)))
    errs["sensitivity_L_jvp"] = worst

    # objective gradient in the weights
    worst = 0.0
    for _ in range(25):
        n = int(rng.integers(2, 11))
        a = rng.standard_normal((n, n))
        cov = ol.cov_from_sigma(a @ a.T + n * np.eye(n))
        mu = rng.standard_normal(n)
        lam = float(rng.uniform(0.2, 3.0))
        w = rng.dirichlet(np.ones(n))
        g = ol.grad_J_w(w, mu, cov.chol, lam)
        eps = 1e-7
        fd = np.zeros(n)
        for j in range(n):
            e = np.zeros(n)
            e[j] = eps
            fd[j] = (ol.objective_J(w + e, mu, cov.chol, lam)
                     - ol.objective_J(w - e, mu, cov.chol, lam)) / (2 * eps)
        worst = max(worst, np.max(np.abs(g - fd)) / np.max(np.abs(fd)))
    errs["grad_J_w"] = worst

    # end-to-end hybrid loss gradient for the linear forecaster
    worst = 0.0
    for trial in range(5):
        model = LinearForecaster.random(4, 3, 1, seed=seed + trial)
        sample = tr.TrainSample(rng.standard_normal((4, 3)) * 0.02,
                                rng.standard_normal((8, 3)) * 0.02,
                                rng.standard_normal((1, 3)) * 0.02)
        loss_cfg = tr.HybridLossConfig(beta=0.4)
        g, _ = tr.grad_hybrid_theta(model, sample, loss_cfg)
        theta0 = model.get_theta()
        eps = 1e-6
        fd = np.zeros_like(theta0)
        for i in range(theta0.size):
            t_p = theta0.copy()
            t_p[i] += eps
            model.set_theta(t_p)
            lp = tr.sample_loss(model, sample, loss_cfg).total
            t_m = theta0.copy()
            t_m[i] -= eps
            model.set_theta(t_m)
            lm = tr.sample_loss(model, sample, loss_cfg).total
            fd[i] = (lp - lm) / (2 * eps)
        model.set_theta(theta0)
        worst = max(worst, np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-12))
    errs["grad_hybrid_theta"] = worst
    return errs


FD_TOLERANCES = {
    "sensitivity_mu": 1e-6,
    "sensitivity_L_jvp": 1e-4,
    "grad_J_w": 1e-6,
    "grad_hybrid_theta": 1e-4,
}


def cmd_verify_gradients(args) -> int:
    seed = args.seed if args.seed is not None else 0
    # identity-covariance reference matrix, printed for eyeball verification
    ident = ol.sensitivity_mu(ol.cov_from_sigma(np.eye(2)), 0.5)
    print("dw/dmu at Sigma=I, N=2, 2*lam=1:")
    print(ident)
    errs = _fd_suite(seed)
    failed = []
    for name, err in errs.items():
        tol = FD_TOLERANCES[name]
        status = "PASS" if err <= tol else "FAIL"
        print(f"{status}  {name:<20} max rel err {err:.3e}  (tol {tol:.0e})")
        if err > tol:
            failed.append(name)
    if failed:
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
        return EXIT_VERIFICATION
    return EXIT_OK


def cmd_prop1(args) -> int:
    try:
        rows, summary = prop1_demo(args.mu1, args.mu2, args.lam, args.k_max)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "prop1_trace.csv", "w") as fh:
        fh.write("k,l2_distance,w1_k,w1_star,gap\n")
        for k, dist, w1k, w1s, gap in rows:
            fh.write(f"{k},{dist:.17g},{w1k:.17g},{w1s:.17g},{gap:.17g}\n")
    print(f"w1_star = {summary['w1_star']:.12g}")
    print(f"limiting w1 = {summary['limiting_w1']:.12g}")
    print(f"limiting gap = {summary['limiting_gap']:.12g}  (= delta / (4 lam))")
    print(f"limiting |mu_k - mu| = {summary['limiting_distance']:.12g} "
          "(distance converges to the offset, not to zero)")
    return EXIT_OK


def cmd_analyze_sensitivity(args) -> int:
    cfg = _load_run_config(args)
    rec_path = Path(cfg.out) / "recordings.npz"
    if not rec_path.exists():
        print(f"error: no backtest recordings at {rec_path}; "
              "run `dfport backtest` first", file=sys.stderr)
        return EXIT_VALIDATION
    import datetime as dt

    from .backtest import BacktestReport
    rec = np.load(rec_path, allow_pickle=False)
    reb_dates = [dt.date.fromisoformat(s) for s in rec["rebalance_dates"]]
    # reconstruct the slice of the report the grouping needs
    report = BacktestReport(
        dates=reb_dates, portfolio_returns=np.zeros(len(reb_dates)),
        rebalance_dates=reb_dates,
        weights=np.zeros((len(reb_dates), rec["predictions"].shape[1])),
        tickers=[f"A{i}" for i in range(rec["predictions"].shape[1])],
        metrics={}, config=_backtest_config(cfg), seed=cfg.seed,
        sensitivities=list(rec["sensitivities"]),
        chol_sensitivity_norms=list(rec["chol_norms"]),
        predictions=list(rec["predictions"]),
        actuals=list(rec["actuals"]))
    groups = sensitivity_grouping(report)
    out = Path(cfg.out)
    with open(out / "sensitivity_grouping.csv", "w") as fh:
        fh.write("regime,x_pct,source,mse_diff,mae_diff,bottom,top\n")
        for g in groups:
            fh.write(f"{g.regime},{g.x_pct},{g.source},{g.mse_diff:.17g},"
                     f"{g.mae_diff:.17g},{'|'.join(map(str, g.bottom))},"
                     f"{'|'.join(map(str, g.top))}\n")
    for g in groups:
        print(f"{g.regime:>6} x={g.x_pct:>2}% [{g.source}] "
              f"mse_diff={g.mse_diff:+.6f} mae_diff={g.mae_diff:+.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dfport",
                                description="Decision-focused portfolio engine")
    p.add_argument("--config", default="data/config.json")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("ingest", "train", "backtest", "verify-gradients",
                 "analyze-sensitivity"):
        sub.add_parser(name)
    p1 = sub.add_parser("prop1-demo")
    p1.add_argument("--mu1", type=float, default=0.10)
    p1.add_argument("--mu2", type=float, default=0.05)
    p1.add_argument("--lam", type=float, default=0.5)
    p1.add_argument("--k-max", dest="k_max", type=int, default=10**6)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "ingest": cmd_ingest,
        "train": cmd_train,
        "backtest": cmd_backtest,
        "verify-gradients": cmd_verify_gradients,
        "prop1-demo": cmd_prop1,
        "analyze-sensitivity": cmd_analyze_sensitivity,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, DataError, BacktestError, ol.OptError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
