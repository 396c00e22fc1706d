"""Run configuration: nested dataclasses with YAML round-trip and hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass

import numpy as np
import yaml

from .errors import ConfigError

DEFAULT_NOISE_SD = float(np.sqrt(0.05))


@dataclass
class ExpertsConfig:
    roster: tuple = ("ar_ls", "exp_smooth", "seasonal_naive", "moving_average", "window_net")
    ar_order: int = 4
    holt: bool = True
    seasonal_period: int = 12
    ma_window: int = 8
    net_hidden: tuple = (32,)
    net_epochs: int = 150
    net_lr: float = 1e-3
    refit_on_validation: bool = True


@dataclass
class GateConfig:
    hidden: int = 60
    lr: float = 1e-4
    epochs: int = 1200
    batch: int = 16
    lam: float = 0.1
    validation_only: bool = False


@dataclass
class QuantileConfig:
    enabled: bool = True
    degree: int = 16
    grid: tuple = (0.05, 0.3, 0.5, 0.7, 0.95)
    constraint: str = "median"
    hidden: tuple = (32, 32)
    lr: float = 1e-4
    epochs: int = 600
    batch: int = 16


@dataclass
class ChangepointConfig:
    hazard: float = 1e-3
    mean0: float = 0.0
    var0: float = 2.0
    obs_var: float = 1.0
    rmax: int = 500
    warmup: int = 20


@dataclass
class OnlineConfig:
    beta0: float = 1.0
    gamma: float = 2.0
    epochs: int = 5
    update_experts: bool = False
    mitigation: bool = True


@dataclass
class SimulateConfig:
    kind: str = "hierarchical"
    n_samples: int = 500
    branching: tuple = (2, 2)
    noise_sd: float = DEFAULT_NOISE_SD


@dataclass
class RunConfig:
    seed: int = 0
    jobs: int = 1
    window: int = 16
    horizon: int = 12
    experts: ExpertsConfig = field(default_factory=ExpertsConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    quantile: QuantileConfig = field(default_factory=QuantileConfig)
    changepoint: ChangepointConfig = field(default_factory=ChangepointConfig)
    online: OnlineConfig = field(default_factory=OnlineConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        return _build(cls, doc or {})

    def dump_yaml(self, path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load_yaml(cls, path) -> "RunConfig":
        with open(path) as fh:
            try:
                doc = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: unparseable config: {exc}")
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        return cls.from_dict(doc)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _build(cls, doc: dict):
    if not isinstance(doc, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}, got {type(doc).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, f in known.items():
        if name not in doc:
            continue
        raw = doc[name]
        if is_dataclass(f.type) or (isinstance(f.type, str) and f.type.endswith("Config")):
            sub_cls = _CONFIG_TYPES[f.type if isinstance(f.type, str) else f.type.__name__]
            kwargs[name] = _build(sub_cls, raw)
        elif isinstance(raw, list):
            kwargs[name] = tuple(raw)
        else:
            kwargs[name] = raw
    return cls(**kwargs)


_CONFIG_TYPES = {
    "ExpertsConfig": ExpertsConfig,
    "GateConfig": GateConfig,
    "QuantileConfig": QuantileConfig,
    "ChangepointConfig": ChangepointConfig,
    "OnlineConfig": OnlineConfig,
    "SimulateConfig": SimulateConfig,
}
