"""Sector yields, outperformance counts, macro summaries, prompt rendering,
and pluggable prompt embeddings.

Prompts are rendered from fixed text templates so identical inputs always
produce identical bytes. Embeddings come from either a deterministic hash
provider (unit-norm pseudo-random vector seeded by the prompt text) or a
sidecar CSV keyed by prompt id.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import MacroPanel, SectorMap

STOCK_PAIR_TEMPLATE = (
    "Assets {i} ({sector_i}) and {j} ({sector_j}): over the last {lookback} periods, "
    "{i} outperformed {j} on {count_stock} periods and its sector outperformed on "
    "{count_sector} periods."
)
MACRO_TEMPLATE = (
    "Macro variable {name} ({metadata}): mean {mean:.6g}, variance {var:.6g}, "
    "lag-1 autocorrelation {autocorr:.6g}, pattern {pattern}, "
    "{n_obs} irregular observations."
)

FLAT_SLOPE_BAND = 1e-12


@dataclass(frozen=True)
class PairStats:
    count_stock: np.ndarray   # N x N ints, diagonal 0
    count_sector: np.ndarray  # N x N ints, diagonal 0
    lookback: int


@dataclass(frozen=True)
class MacroVarStats:
    name: str
    mean: float
    var: float
    autocorr: float
    pattern: str  # rising | falling | flat
    n_obs: int
    metadata: str = ""


@dataclass(frozen=True)
class PromptDoc:
    id: str
    kind: str  # stock_pair | macro
    text: str


@dataclass(frozen=True)
class EmbeddingMatrix:
    vectors: np.ndarray  # n_docs x d_llm
    d_llm: int
    provider_id: str


def sector_yields(window: np.ndarray, tickers: list[str], sectors: SectorMap):
    """Per-sector mean of member returns at each time step of the window.

    Returns (sector_names, L x S matrix).
    """
    names = sectors.sectors
    members = {s: [k for k, t in enumerate(tickers) if sectors.sector_of(t) == s]
               for s in names}
    cols = [np.asarray(window)[:, members[s]].mean(axis=1) for s in names]
    return names, np.stack(cols, axis=1)


def pair_counts(window: np.ndarray, tickers: list[str], sectors: SectorMap) -> PairStats:
    """Strict-inequality outperformance counts; ties count for neither side."""
    window = np.asarray(window, dtype=float)
    L, N = window.shape
    names, sec_series = sector_yields(window, tickers, sectors)
    sec_idx = [names.index(sectors.sector_of(t)) for t in tickers]
    per_asset_sector = sec_series[:, sec_idx]  # L x N

    gt = window[:, :, None] > window[:, None, :]
    count_stock = gt.sum(axis=0).astype(int)
    gt_sec = per_asset_sector[:, :, None] > per_asset_sector[:, None, :]
    count_sector = gt_sec.sum(axis=0).astype(int)
    np.fill_diagonal(count_stock, 0)
    np.fill_diagonal(count_sector, 0)
    return PairStats(count_stock, count_sector, L)


def macro_stats(panel: MacroPanel, min_obs: int = 3) -> list[MacroVarStats]:
    """Summaries over irregularly observed values; variables with fewer than
    `min_obs` points are skipped."""
    out = []
    for s in panel.series:
        v = np.asarray(s.values, dtype=float)
        if v.size < min_obs:
            continue
        mean = float(v.mean())
        var = float(v.var())
        if var > 0:
            d = v - mean
            autocorr = float((d[:-1] * d[1:]).sum() / (d * d).sum())
        else:
            autocorr = 0.0
        # slope of the least-squares line against observation time, in
        # normalized units so the flat band is scale-free
        t = np.array([(d_ - s.times[0]).days for d_ in s.times], dtype=float)
        t_span = t[-1] - t[0] if t[-1] > t[0] else 1.0
        scale = np.sqrt(var) if var > 0 else 1.0
        tn, vn = t / t_span, (v - mean) / scale
        slope = float(np.polyfit(tn, vn, 1)[0]) if v.size > 1 else 0.0
        if abs(slope) < FLAT_SLOPE_BAND:
            pattern = "flat"
        else:
            pattern = "rising" if slope > 0 else "falling"
        out.append(MacroVarStats(s.name, mean, var, autocorr, pattern, v.size, s.metadata))
    return out


def render_stock_prompts(stats: PairStats, tickers: list[str], sectors: SectorMap,
                         template: str = STOCK_PAIR_TEMPLATE) -> list[PromptDoc]:
    docs = []
    for a, ti in enumerate(tickers):
        for b, tj in enumerate(tickers):
            if a == b:
                continue
            text = template.format(
                i=ti, j=tj,
                sector_i=sectors.sector_of(ti), sector_j=sectors.sector_of(tj),
                lookback=stats.lookback,
                count_stock=int(stats.count_stock[a, b]),
                count_sector=int(stats.count_sector[a, b]),
            )
            docs.append(PromptDoc(f"stock:{ti}:{tj}", "stock_pair", text))
    return docs


def render_macro_prompts(stats: list[MacroVarStats],
                         template: str = MACRO_TEMPLATE) -> list[PromptDoc]:
    return [
        PromptDoc(f"macro:{s.name}", "macro", template.format(
            name=s.name, metadata=s.metadata or "no metadata", mean=s.mean,
            var=s.var, autocorr=s.autocorr, pattern=s.pattern, n_obs=s.n_obs))
        for s in stats
    ]


class HashEmbeddingProvider:
    """Deterministic unit-norm pseudo-random vector per prompt text."""

    def __init__(self, d_llm: int):
        self.d_llm = int(d_llm)
        self.provider_id = f"hash-{d_llm}"

    def vector(self, doc: PromptDoc) -> np.ndarray:
        digest = hashlib.sha256(doc.text.encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.standard_normal(self.d_llm)
        return v / np.linalg.norm(v)


class FileEmbeddingProvider:
    """Vectors read from a CSV sidecar with rows `id,v_1,...,v_d`."""

    def __init__(self, path):
        df = pd.read_csv(path)
        if "id" not in df.columns:
            raise ValueError("embedding sidecar must have an `id` column")
        dims = [c for c in df.columns if c != "id"]
        self.d_llm = len(dims)
        self.provider_id = f"file-{self.d_llm}"
        self._table = {str(r["id"]): np.asarray([float(r[c]) for c in dims])
                       for _, r in df.iterrows()}

    def vector(self, doc: PromptDoc) -> np.ndarray:
        try:
            return self._table[doc.id]
        except KeyError:
            raise KeyError(f"no embedding for prompt id {doc.id!r}") from None


def embed(docs: list[PromptDoc], provider) -> EmbeddingMatrix:
    """One embedding row per prompt document, in document order."""
    if not docs:
        raise ValueError("no prompt documents to embed")
    rows = [provider.vector(d) for d in docs]
    widths = {r.shape[0] for r in rows}
    if len(widths) != 1:
        raise ValueError(f"inconsistent embedding widths {sorted(widths)}")
    mat = np.stack(rows)
    if not np.all(np.isfinite(mat)):
        raise ValueError("non-finite embedding values")
    return EmbeddingMatrix(mat, mat.shape[1], provider.provider_id)
