#!/usr/bin/env python3
"""Generate the bundled synthetic dataset: seeded geometric-random-walk
prices for 10 assets over 2019-07..2023-06 (so the regime windows overlap),
three irregularly sampled macro series, a sector map, and a default config.

Usage: python scripts/make_synthetic_data.py [out_dir]
"""

import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

SEED = 20240613
TICKERS = ["AAA", "BBB", "CCC", "DDD", "EEE", "FFF", "GGG", "HHH", "III", "JJJ"]
SECTORS = {
    "AAA": "tech", "BBB": "tech", "CCC": "tech",
    "DDD": "energy", "EEE": "energy",
    "FFF": "finance", "GGG": "finance", "HHH": "finance",
    "III": "health", "JJJ": "health",
}


def main(out_dir="data"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(SEED)
    dates = pd.bdate_range("2019-07-01", "2023-06-30")
    t, n = len(dates), len(TICKERS)

    # one market factor, mild sector factors, idiosyncratic noise
    market = rng.normal(0.0003, 0.009, size=t)
    sector_names = sorted(set(SECTORS.values()))
    sector_shocks = rng.normal(0.0, 0.004, size=(t, len(sector_names)))
    beta = rng.uniform(0.6, 1.4, size=n)
    drift = rng.normal(0.0002, 0.0002, size=n)
    idio = rng.normal(0.0, 0.007, size=(t, n))
    sec_idx = [sector_names.index(SECTORS[tk]) for tk in TICKERS]
    rets = drift + beta * market[:, None] + sector_shocks[:, sec_idx] + idio
    prices = 100.0 * np.exp(np.cumsum(np.log1p(rets), axis=0))

    pdf = pd.DataFrame(prices, columns=TICKERS)
    pdf.insert(0, "date", dates.strftime("%Y-%m-%d"))
    pdf.to_csv(out / "prices.csv", index=False, float_format="%.6f")

    # macro: weekly claims-like, monthly sales-like, monthly sentiment-like
    rows = []
    weekly = pd.bdate_range("2019-07-04", "2023-06-29", freq="W-THU")
    level = 220.0 + np.cumsum(rng.normal(0, 4, size=len(weekly)))
    for d, v in zip(weekly, level):
        rows.append(("claims", d.strftime("%Y-%m-%d"), round(float(v), 2)))
    monthly = pd.date_range("2019-07-31", "2023-06-30", freq="ME")
    sales = 620.0 + 30 * np.sin(np.arange(len(monthly)) / 5.0) \
        + rng.normal(0, 12, size=len(monthly))
    for d, v in zip(monthly, sales):
        rows.append(("home_sales", d.strftime("%Y-%m-%d"), round(float(v), 2)))
    sentiment = 95.0 - 0.4 * np.arange(len(monthly)) + rng.normal(0, 3, size=len(monthly))
    for d, v in zip(monthly, sentiment):
        rows.append(("sentiment", d.strftime("%Y-%m-%d"), round(float(v), 2)))
    pd.DataFrame(rows, columns=["variable", "date", "value"]) \
        .to_csv(out / "macro.csv", index=False)

    pd.DataFrame({"ticker": TICKERS, "sector": [SECTORS[tk] for tk in TICKERS]}) \
        .to_csv(out / "sectors.csv", index=False)

    config = {
        "paths.prices": str(out / "prices.csv"),
        "paths.macro": str(out / "macro.csv"),
        "paths.sectors": str(out / "sectors.csv"),
        "backtest.lookback": 10,
        "backtest.horizon": 1,
        "backtest.cov_history": 30,
        "backtest.stride": 5,
        "train.max_epochs": 5,
        "train.max_windows": 60,
        "model.kind": "zero",
        "seed": 7,
        "out": "out",
    }
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n")
    print(f"wrote {out}/prices.csv ({t} rows), macro.csv, sectors.csv, config.json")


if __name__ == "__main__":
    main(*sys.argv[1:])
