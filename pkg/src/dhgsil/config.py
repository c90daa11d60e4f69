"""Run configuration: a flat ``key = value`` text format with strict key checking."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

VARIANTS = ("full", "DHG", "SIL", "GCN-SIL", "NC")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # paths
    cities: str = ""
    flows: str = ""
    out: str = "out"
    # geography graph
    epsilon_km: float = 100.0
    tau_km: float = -1.0  # < 0 means 10% of epsilon
    decay_km: float = -1.0  # < 0 means epsilon
    # architecture
    window: int = 5
    embed_dim: int = 8
    gcn_layers: int = 2
    head_hidden: int = 16
    width: int = 256
    theta: int = 32
    trunk_layers: int = 1
    trend_degree: int = 3
    feature_wiring: str = "head"  # head | channels | off
    # objective
    contrastive: bool = True
    margin_delta: float = 0.1
    margin_mu: float = 0.1
    contrastive_weight: float = 1.0
    contrastive_normalize: bool = True
    cross_time_pairs: str = "all"  # all | consecutive
    totals_include_self: bool = True
    norm: str = "unsquared"  # unsquared | squared
    forecast_weight: float = 1.0
    forecast_bound: float = 2.0  # max |log change| per forecast step; 0 disables
    forecast_detach: bool = True  # forecast error does not update the per-step fit
    # optimization
    lr: float = 0.001
    epochs: int = 2000
    patience: int = 100
    plateau_tol: float = 1e-6
    seed: int = 0
    variant: str = "full"
    normalization: str = "global"

    def __post_init__(self):
        checks = [
            (self.epsilon_km >= 0, "epsilon_km must be >= 0"),
            (self.window >= 1, "window must be >= 1"),
            (self.embed_dim >= 1 and self.gcn_layers >= 1 and self.head_hidden >= 1, "layer sizes must be >= 1"),
            (self.width >= 1 and self.theta >= 2 and self.trunk_layers >= 1, "N-BEATS sizes must be positive"),
            (self.trend_degree >= 0, "trend_degree must be >= 0"),
            (self.feature_wiring in ("head", "channels", "off"), "feature_wiring must be head, channels or off"),
            (self.margin_delta >= 0 and self.margin_mu >= 0, "margins must be >= 0"),
            (self.contrastive_weight >= 0 and self.forecast_weight >= 0, "term weights must be >= 0"),
            (self.forecast_bound >= 0, "forecast_bound must be >= 0"),
            (self.cross_time_pairs in ("all", "consecutive"), "cross_time_pairs must be all or consecutive"),
            (self.norm in ("unsquared", "squared"), "norm must be unsquared or squared"),
            (0 < self.lr < 1, "lr must be in (0, 1)"),
            (self.epochs >= 0 and self.patience >= 1 and self.plateau_tol >= 0, "invalid epoch settings"),
            (self.variant in VARIANTS, f"variant must be one of {', '.join(VARIANTS)}"),
            (self.normalization in ("global", "per_step", "none"), "normalization must be global, per_step or none"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def tau(self) -> float:
        return 0.1 * self.epsilon_km if self.tau_km < 0 else self.tau_km

    @property
    def decay_length(self) -> float | None:
        return None if self.decay_km < 0 else self.decay_km

    @property
    def use_contrastive(self) -> bool:
        return self.contrastive and self.variant != "NC"

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **overrides) -> "RunConfig":
        return cls.from_mapping({**parse_pairs(text), **overrides})

    @classmethod
    def from_mapping(cls, raw: dict) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for key, value in raw.items():
            if key not in types:
                raise ConfigError(f"unknown config key: {key}")
            values[key] = _coerce(key, types[key], value)
        return cls(**values)

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), **overrides)


def parse_pairs(text: str) -> dict[str, str]:
    pairs = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ConfigError(f"line {n}: duplicate key {key}")
        pairs[key] = value
    return pairs


def _coerce(key: str, typ: str, value):
    if not isinstance(value, str):
        return value
    try:
        if typ == "bool":
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {value!r}") from None
    return value
