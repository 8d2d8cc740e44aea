"""Multi-head prob-sparse cross-attention between temporal windows and
embedding matrices.

Each query attends only to a sampled subset of keys of size c*ceil(ln M),
with softmax weights normalized over the sampled set. The sampling plan is
drawn once from a seeded generator and can be frozen and reused, which makes
evaluation pure and gradient checks well defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class AttnParams:
    wq: np.ndarray          # d x d
    wk: np.ndarray          # d x d
    wv: np.ndarray          # d x d
    wo: np.ndarray          # d x d
    input_proj: np.ndarray  # L x d, lifts each asset's history into query space
    heads: int
    sample_const: float = 5.0

    @property
    def d_llm(self) -> int:
        return self.wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.d_llm // self.heads

    def validate(self):
        d = self.d_llm
        for name in ("wq", "wk", "wv", "wo"):
            m = getattr(self, name)
            if m.shape != (d, d) or not np.all(np.isfinite(m)):
                raise ValueError(f"attention parameter {name} invalid")
        if not np.all(np.isfinite(self.input_proj)):
            raise ValueError("input_proj not finite")
        if d % self.heads != 0:
            raise ValueError("heads must divide d_llm")

    @classmethod
    def init(cls, lookback: int, d_llm: int, heads: int, seed: int,
             sample_const: float = 5.0) -> "AttnParams":
        rng = np.random.default_rng(seed)
        scale = 1.0 / math.sqrt(d_llm)
        def u(shape):
            return rng.uniform(-scale, scale, size=shape)
        return cls(u((d_llm, d_llm)), u((d_llm, d_llm)), u((d_llm, d_llm)),
                   u((d_llm, d_llm)), u((lookback, d_llm)), heads, sample_const)


@dataclass(frozen=True)
class SparsePlan:
    # indices[b][i] is the sampled key index set for head b, query i
    indices: list[list[np.ndarray]]
    rng_seed: int
    n_keys: int

    @property
    def sample_size(self) -> int:
        return len(self.indices[0][0])


def sample_size(sample_const: float, n_keys: int) -> int:
    """c * ceil(ln M), capped at M."""
    if n_keys < 1:
        raise ValueError("need at least one key")
    u = int(sample_const * math.ceil(math.log(n_keys))) if n_keys > 1 else 1
    return max(1, min(u, n_keys))


def make_plan(n_queries: int, n_keys: int, heads: int, sample_const: float,
              seed: int) -> SparsePlan:
    """Uniform sampling without replacement per (head, query)."""
    rng = np.random.default_rng(seed)
    u = sample_size(sample_const, n_keys)
    indices = [[np.sort(rng.choice(n_keys, size=u, replace=False))
                for _ in range(n_queries)] for _ in range(heads)]
    return SparsePlan(indices, seed, n_keys)


def _forward(x, y, params: AttnParams, plan: SparsePlan):
    """Shared forward pass; returns output plus intermediates for backprop."""
    params.validate()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    L, N = x.shape
    M, d = y.shape
    if params.input_proj.shape[0] != L or d != params.d_llm:
        raise ValueError("shape mismatch between inputs and attention parameters")
    if plan.n_keys != M:
        raise ValueError("sampling plan built for a different key count")

    xq = x.T @ params.input_proj           # N x d
    q = xq @ params.wq
    k = y @ params.wk
    v = y @ params.wv
    db = params.head_dim
    B = params.heads

    z = np.zeros((N, d))
    alphas = []  # per head: list over queries of weight vectors on sampled keys
    for b in range(B):
        sl = slice(b * db, (b + 1) * db)
        qb, kb, vb = q[:, sl], k[:, sl], v[:, sl]
        head_alphas = []
        for i in range(N):
            idx = plan.indices[b][i]
            scores = qb[i] @ kb[idx].T / math.sqrt(db)
            scores -= scores.max()
            e = np.exp(scores)
            a = e / e.sum()
            z[i, sl] = a @ vb[idx]
            head_alphas.append(a)
        alphas.append(head_alphas)
    out = z @ params.wo
    return out, (xq, q, k, v, z, alphas)


def cross_attn(x, y, params: AttnParams, plan: SparsePlan | None = None,
               seed: int = 0) -> np.ndarray:
    """Fuse an LxN temporal matrix with an Mxd embedding matrix into Nxd."""
    if plan is None:
        plan = make_plan(np.asarray(x).shape[1], np.asarray(y).shape[0],
                         params.heads, params.sample_const, seed)
    out, _ = _forward(x, y, params, plan)
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite attention output")
    return out


def attn_weights(x, y, params: AttnParams, plan: SparsePlan):
    """Sparse softmax weights per head and query, for invariant checks."""
    _, (_, _, _, _, _, alphas) = _forward(x, y, params, plan)
    return alphas


def grad_wq(x, y, params: AttnParams, plan: SparsePlan,
            upstream: np.ndarray) -> np.ndarray:
    """Gradient of sum(upstream * output) with respect to wq, frozen plan."""
    out, (xq, q, k, v, _, alphas) = _forward(x, y, params, plan)
    N, d = out.shape
    db = params.head_dim
    dz = np.asarray(upstream) @ params.wo.T  # N x d
    dq = np.zeros_like(q)
    for b in range(params.heads):
        sl = slice(b * db, (b + 1) * db)
        kb, vb = k[:, sl], v[:, sl]
        for i in range(N):
            idx = plan.indices[b][i]
            a = alphas[b][i]
            dalpha = vb[idx] @ dz[i, sl]
            dscore = a * (dalpha - a @ dalpha)
            dq[i, sl] = dscore @ kb[idx] / math.sqrt(db)
    return xq.T @ dq


def fuse_contexts(trend, residual, e_macro, e_stocks, params: AttnParams,
                  seed: int = 0):
    """Market context from (trend, macro embeddings); stock context from
    (residual, stock embeddings)."""
    c_market = cross_attn(trend, e_macro.vectors if hasattr(e_macro, "vectors") else e_macro,
                          params, seed=seed)
    c_stock = cross_attn(residual, e_stocks.vectors if hasattr(e_stocks, "vectors") else e_stocks,
                         params, seed=seed + 1)
    return c_market, c_stock
