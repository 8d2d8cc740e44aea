"""Loading of price, macro, and sector files into clean panels.

Prices arrive as a wide CSV (``date,TICKER1,TICKER2,...``), macro series as a
long CSV (``variable,date,value``), and the sector map as ``ticker,sector``.
Rows with missing or non-positive prices are dropped (never imputed) so that
downstream covariance estimates are not biased by fill-in artifacts.
"""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised when an input file violates a panel invariant."""


@dataclass(frozen=True)
class PricePanel:
    dates: list[dt.date]
    tickers: list[str]
    prices: np.ndarray  # T x N, strictly positive
    dropped_rows: int = 0

    def __post_init__(self):
        if self.prices.shape != (len(self.dates), len(self.tickers)):
            raise DataError("price matrix shape does not match dates/tickers")
        if np.any(self.prices <= 0):
            raise DataError("prices must be strictly positive")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("dates must be strictly increasing")


@dataclass(frozen=True)
class ReturnPanel:
    dates: list[dt.date]
    tickers: list[str]
    returns: np.ndarray  # T x N excess returns
    risk_free: float = 0.0

    def __post_init__(self):
        if self.returns.shape != (len(self.dates), len(self.tickers)):
            raise DataError("return matrix shape does not match dates/tickers")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("dates must be strictly increasing")

    def to_csv(self, path) -> None:
        df = pd.DataFrame(self.returns, columns=self.tickers)
        df.insert(0, "date", [d.isoformat() for d in self.dates])
        df.to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path, risk_free: float = 0.0) -> "ReturnPanel":
        df = pd.read_csv(path, float_precision="round_trip")
        dates = [dt.date.fromisoformat(s) for s in df["date"].astype(str)]
        tickers = [c for c in df.columns if c != "date"]
        return cls(dates, tickers, df[tickers].to_numpy(dtype=float), risk_free)


@dataclass(frozen=True)
class MacroSeries:
    name: str
    times: list[dt.date]
    values: np.ndarray
    metadata: str = ""

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise DataError(f"{self.name}: times/values length mismatch")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise DataError(f"{self.name}: observation times must be strictly increasing")


@dataclass(frozen=True)
class MacroPanel:
    series: list[MacroSeries]

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.series]


@dataclass(frozen=True)
class SectorMap:
    mapping: dict[str, str]
    sectors: list[str] = field(init=False)

    def __post_init__(self):
        if not self.mapping:
            raise DataError("sector map is empty")
        object.__setattr__(self, "sectors", sorted(set(self.mapping.values())))

    def sector_of(self, ticker: str) -> str:
        try:
            return self.mapping[ticker]
        except KeyError:
            raise DataError(f"ticker {ticker!r} has no sector mapping") from None


def load_prices(path) -> PricePanel:
    """Parse a wide price CSV, dropping rows with missing or invalid cells."""
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read price file {path}: {exc}") from exc
    if "date" not in df.columns or len(df.columns) < 2:
        raise DataError("price CSV must have a `date` column plus ticker columns")
    tickers = [c for c in df.columns if c != "date"]

    dates: list[dt.date] = []
    rows: list[np.ndarray] = []
    dropped = 0
    for _, rec in df.iterrows():
        try:
            d = dt.date.fromisoformat(str(rec["date"]))
            vals = np.asarray([float(rec[t]) for t in tickers])
        except (ValueError, TypeError):
            dropped += 1
            continue
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            dropped += 1
            continue
        dates.append(d)
        rows.append(vals)
    if dropped:
        log.info("load_prices: dropped %d unusable rows", dropped)
    if not rows:
        raise DataError("no usable price rows")
    if len(set(dates)) != len(dates):
        raise DataError("duplicate dates in price file")
    order = np.argsort(dates)
    prices = np.stack(rows)[order]
    dates = [dates[i] for i in order]
    return PricePanel(dates, tickers, prices, dropped_rows=dropped)


def to_excess_returns(panel: PricePanel, risk_free: float = 0.0) -> ReturnPanel:
    """Simple returns minus the per-period risk-free rate; consumes the first row."""
    if len(panel.dates) < 2:
        raise DataError("need at least two price rows to form returns")
    p = panel.prices
    rets = (p[1:] - p[:-1]) / p[:-1] - risk_free
    return ReturnPanel(panel.dates[1:], panel.tickers, rets, risk_free)


def load_macro(path, metadata: dict[str, str] | None = None) -> MacroPanel:
    """Parse a long-format macro CSV; irregular observation gaps are kept verbatim."""
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read macro file {path}: {exc}") from exc
    for col in ("variable", "date", "value"):
        if col not in df.columns:
            raise DataError(f"macro CSV missing column {col!r}")
    metadata = metadata or {}
    series = []
    for name, grp in df.groupby("variable", sort=True):
        times = [dt.date.fromisoformat(str(s)) for s in grp["date"]]
        values = grp["value"].to_numpy(dtype=float)
        series.append(MacroSeries(str(name), times, values, metadata.get(str(name), "")))
    return MacroPanel(series)


def load_sectors(path) -> SectorMap:
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read sector file {path}: {exc}") from exc
    for col in ("ticker", "sector"):
        if col not in df.columns:
            raise DataError(f"sector CSV missing column {col!r}")
    return SectorMap(dict(zip(df["ticker"].astype(str), df["sector"].astype(str))))
