"""Run configuration: a single JSON document with flat dotted keys mirroring
the module structure (nested objects are also accepted and flattened).

Example:

    {
      "paths.prices": "data/prices.csv",
      "loss.beta": 0.4,
      "backtest.lookback": 10
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .backtest import DEFAULT_LAMBDA
from .preprocess import DEFAULT_EPSILON, DEFAULT_KERNELS


class ConfigError(ValueError):
    """Validation failure; the message names the offending dotted field."""


@dataclass
class PathsConfig:
    prices: str = "data/prices.csv"
    macro: str = "data/macro.csv"
    sectors: str = "data/sectors.csv"
    embeddings: str | None = None  # optional sidecar; hash provider otherwise
    checkpoint: str | None = None


@dataclass
class PreprocessConfig:
    epsilon: float = DEFAULT_EPSILON
    kernels: list = field(default_factory=lambda: list(DEFAULT_KERNELS))


@dataclass
class AttentionConfig:
    heads: int = 4
    d_llm: int = 24
    sample_const: float = 5.0
    seed: int = 0


@dataclass
class LossConfig:
    beta: float = 0.4
    lam: float = DEFAULT_LAMBDA
    risk_form: str = "stdev"


@dataclass
class TrainSection:
    max_epochs: int = 50
    base_step: float = 1e-4
    patience: int = 5
    batch_size: int = 16
    val_fraction: float = 0.2
    max_windows: int = 200


@dataclass
class BacktestSection:
    lookback: int = 10
    horizon: int = 1
    cov_history: int = 30
    stride: int | None = None
    period_per_year: int = 252
    risk_free_annual: float = 0.0
    risk_free_period: float = 0.0


@dataclass
class ModelConfig:
    kind: str = "context"  # context | linear | zero


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainSection = field(default_factory=TrainSection)
    backtest: BacktestSection = field(default_factory=BacktestSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 0
    out: str = "out"

    def validate(self, require_files: bool = True) -> None:
        if not 0.0 <= self.loss.beta <= 1.0:
            raise ConfigError("loss.beta must lie in [0, 1]")
        if self.loss.lam <= 0:
            raise ConfigError("loss.lam must be positive")
        if self.loss.risk_form not in ("stdev", "variance"):
            raise ConfigError("loss.risk_form must be `stdev` or `variance`")
        if self.preprocess.epsilon <= 0:
            raise ConfigError("preprocess.epsilon must be positive")
        if not self.preprocess.kernels or min(self.preprocess.kernels) < 1:
            raise ConfigError("preprocess.kernels must be positive integers")
        if self.attention.d_llm % self.attention.heads != 0:
            raise ConfigError("attention.heads must divide attention.d_llm")
        for name in ("lookback", "horizon", "cov_history"):
            if getattr(self.backtest, name) < 1:
                raise ConfigError(f"backtest.{name} must be >= 1")
        if self.train.max_epochs < 1 or self.train.batch_size < 1:
            raise ConfigError("train.max_epochs and train.batch_size must be >= 1")
        if self.train.base_step <= 0:
            raise ConfigError("train.base_step must be positive")
        if not 0.0 < self.train.val_fraction < 1.0:
            raise ConfigError("train.val_fraction must lie in (0, 1)")
        if self.model.kind not in ("context", "linear", "zero"):
            raise ConfigError("model.kind must be context, linear, or zero")
        if require_files:
            for name in ("prices", "macro", "sectors"):
                p = getattr(self.paths, name)
                if not Path(p).exists():
                    raise ConfigError(f"paths.{name}: file not found: {p}")

    def to_flat_dict(self) -> dict:
        flat = {"seed": self.seed, "out": self.out}
        for sec in ("paths", "preprocess", "attention", "loss", "train",
                    "backtest", "model"):
            obj = getattr(self, sec)
            for f in fields(obj):
                flat[f"{sec}.{f.name}"] = getattr(obj, f.name)
        return flat


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, f"{key}."))
        else:
            out[key] = v
    return out


def load_config(path, overrides: dict | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    flat = _flatten(raw)
    flat.update(overrides or {})
    cfg = RunConfig()
    known = set(cfg.to_flat_dict())
    for key, value in flat.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if "." in key:
            sec, name = key.split(".", 1)
            setattr(getattr(cfg, sec), name, value)
        else:
            setattr(cfg, key, value)
    return cfg
