"""Run configuration, TOML round-trip and ``key=value`` overrides.

Layout of a config file (every key optional; omitted keys take defaults)::

    epochs = 200
    batch_size = 64
    lr = 0.001
    weight_decay = 1e-5
    beta_con = 1.0
    seed = 0
    eval_every = 10
    hidden_dims = [64]          # omit for max(64, input_dim // 2) per view
    activation = "softplus"     # softplus | exp | relu
    exact_fusion_grad = false
    fresh_eval_prior = false
    per_view_prior = false
    prior_base_rates = true     # false pins base rates to 1/K
    trajectory_source = "evidence"  # evidence | projected

    [schedule]
    warmup_epochs = 20
    refresh_interval = 5
    gamma = 1.0

    [ablation]
    adaptive_prior = true
    fairness = true
    consistency = true

    [data]
    test_fraction = 0.2
    imbalance_ratio = 10.0

Overrides use dotted keys, e.g. ``schedule.gamma=5`` or ``ablation.fairness=false``.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .net import ACTIVATIONS
from .prior import PriorSchedule


# What the recorded per-sample training prediction is the argmax of: the
# fused evidence (network output only) or the fused projected probability,
# which already includes the prior being refreshed.
TRAJECTORY_SOURCES = ("evidence", "projected")


@dataclass(frozen=True)
class Ablation:
    adaptive_prior: bool = True
    fairness: bool = True
    consistency: bool = True


@dataclass(frozen=True)
class DataConfig:
    test_fraction: float = 0.2
    imbalance_ratio: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("data.test_fraction must lie in (0, 1)")
        if self.imbalance_ratio < 1.0:
            raise ConfigError("data.imbalance_ratio must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-5
    beta_con: float = 1.0
    seed: int = 0
    eval_every: int = 10
    hidden_dims: tuple[int, ...] | None = None
    activation: str = "softplus"
    exact_fusion_grad: bool = False
    fresh_eval_prior: bool = False
    per_view_prior: bool = False
    prior_base_rates: bool = True
    trajectory_source: str = "evidence"
    schedule: PriorSchedule = field(default_factory=PriorSchedule)
    ablation: Ablation = field(default_factory=Ablation)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0 or self.weight_decay < 0 or self.beta_con < 0:
            raise ConfigError("lr must be > 0; weight_decay and beta_con must be >= 0")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if self.trajectory_source not in TRAJECTORY_SOURCES:
            raise ConfigError(f"trajectory_source must be one of {TRAJECTORY_SOURCES}")
        if self.hidden_dims is not None:
            object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    def with_ablation(self, adaptive_prior: bool, fairness: bool, consistency: bool) -> "TrainConfig":
        return replace(self, ablation=Ablation(adaptive_prior, fairness, consistency))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        if d["hidden_dims"] is None:
            del d["hidden_dims"]
        else:
            d["hidden_dims"] = list(d["hidden_dims"])
        return d

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


_SECTIONS = {"schedule": PriorSchedule, "ablation": Ablation, "data": DataConfig}


def _coerce(name: str, value: Any, annotation: Any) -> Any:
    ann = str(annotation)
    if ann.startswith("bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be a boolean, got {value!r}")
        return value
    if ann.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        return value
    if ann.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        return float(value)
    if ann.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string, got {value!r}")
        return value
    if "tuple" in ann:
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{name} must be a list of integers, got {value!r}")
        return tuple(value)
    return value


def _build(cls, raw: dict[str, Any], prefix: str = ""):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        name = f"{prefix}{key}"
        if key not in known:
            raise ConfigError(f"unknown config key {name!r}")
        if key in _SECTIONS and cls is TrainConfig:
            if not isinstance(value, dict):
                raise ConfigError(f"{name} must be a table")
            kwargs[key] = _build(_SECTIONS[key], value, prefix=f"{key}.")
        else:
            kwargs[key] = _coerce(name, value, known[key].type)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_from_dict(raw: dict[str, Any]) -> TrainConfig:
    return _build(TrainConfig, raw)


def parse_override(text: str) -> tuple[list[str], Any]:
    """Split ``a.b=value``; the value is read as a TOML literal, else a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key.split("."), value


def apply_overrides(raw: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    for text in overrides:
        path, value = parse_override(text)
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r}: {part!r} is not a table")
        node[path[-1]] = value
    return out


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> TrainConfig:
    raw: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            raw = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
    return config_from_dict(apply_overrides(raw, overrides or []))
