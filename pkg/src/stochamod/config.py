"""JSON scenario configuration.

Required fields::

    n, dt_s, travel_time, fleet_size, initial_vehicles, demand_trace,
    costs {c_x_scale, c_wait_scale, c_drop}, horizon_T,
    controller_period_s, tick_s, K, seed

Optional fields:

``duration_s``
    Length of the demand phase; defaults to the trace's last request
    rounded up to a whole controller period.
``drain_s``
    Extra simulated time after the demand phase for queues to empty (default 3600).
``lookback_s``
    Span of realised demand handed to forecasters (default 14400).
``engine``
    LP engine, ``"simplex"`` (default) or ``"highs"``.
``forecast``
    Demand model for the forecasting controllers.  One of
    ``{"type": "empirical"}`` (default: stationary Poisson at the trace's
    average per-pair rate), ``{"type": "poisson", "rate_per_hour": r}``
    (uniform over ordered station pairs), ``{"type": "bootstrap",
    "traces": [paths]}`` or ``{"type": "samples", "path": p}``.

Relative paths resolve against the config file's directory.  Unknown
fields are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .lpcore import ENGINES


class ConfigError(ValueError):
    """Invalid scenario configuration."""


REQUIRED = ("n", "dt_s", "travel_time", "fleet_size", "initial_vehicles", "demand_trace",
            "costs", "horizon_T", "controller_period_s", "tick_s", "K", "seed")
OPTIONAL = ("duration_s", "drain_s", "lookback_s", "engine", "forecast")
COST_FIELDS = ("c_x_scale", "c_wait_scale", "c_drop")
FORECAST_TYPES = {"empirical": (), "poisson": ("rate_per_hour",), "bootstrap": ("traces",),
                  "samples": ("path",)}


@dataclass(frozen=True)
class CostSettings:
    c_x_scale: float = 1.0
    c_wait_scale: float = 1.0
    c_drop: Optional[float] = None


@dataclass(frozen=True)
class ScenarioConfig:
    n: int
    dt_s: int
    travel_time: List[List[int]]
    fleet_size: int
    initial_vehicles: List[int]
    demand_trace: str
    costs: CostSettings
    horizon_T: int
    controller_period_s: int
    tick_s: int
    K: int
    seed: int
    duration_s: Optional[int] = None
    drain_s: int = 3600
    lookback_s: int = 4 * 3600
    engine: str = "simplex"
    forecast: Dict[str, Any] = field(default_factory=lambda: {"type": "empirical"})
    base_dir: str = "."

    def __post_init__(self):
        _validate(self)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in REQUIRED + OPTIONAL}
        d["costs"] = {k: getattr(self.costs, k) for k in COST_FIELDS}
        return d


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _validate(c: ScenarioConfig) -> None:
    for name in ("n", "dt_s", "fleet_size", "horizon_T", "controller_period_s", "tick_s", "K",
                 "seed", "drain_s", "lookback_s"):
        if not _is_int(getattr(c, name)):
            raise ConfigError(f"{name} must be an integer")
    if c.n < 1:
        raise ConfigError("n must be at least 1")
    for name in ("dt_s", "horizon_T", "controller_period_s", "tick_s", "K"):
        if getattr(c, name) < 1:
            raise ConfigError(f"{name} must be positive")
    if c.fleet_size < 0 or c.drain_s < 0 or c.lookback_s < 0:
        raise ConfigError("fleet_size, drain_s and lookback_s must be non-negative")
    if c.duration_s is not None and (not _is_int(c.duration_s) or c.duration_s < 0):
        raise ConfigError("duration_s must be a non-negative integer")
    tau = np.asarray(c.travel_time, dtype=object)
    if tau.shape != (c.n, c.n) or not all(_is_int(v) and v >= 1 for v in tau.ravel()):
        raise ConfigError(f"travel_time must be an {c.n}x{c.n} matrix of integers >= 1")
    if len(c.initial_vehicles) != c.n or not all(_is_int(v) and v >= 0 for v in c.initial_vehicles):
        raise ConfigError(f"initial_vehicles must list {c.n} non-negative integers")
    if sum(c.initial_vehicles) != c.fleet_size:
        raise ConfigError(f"initial_vehicles sum to {sum(c.initial_vehicles)}, "
                          f"fleet_size is {c.fleet_size}")
    if c.controller_period_s % c.tick_s:
        raise ConfigError("controller_period_s must be a multiple of tick_s")
    if c.engine not in ENGINES:
        raise ConfigError(f"engine must be one of {ENGINES}")
    if not isinstance(c.demand_trace, str):
        raise ConfigError("demand_trace must be a path string")
    for name in COST_FIELDS:
        v = getattr(c.costs, name)
        if v is None and name == "c_drop":
            continue
        if not isinstance(v, (int, float)) or isinstance(v, bool) or v < 0:
            raise ConfigError(f"costs.{name} must be a non-negative number")
    fc = c.forecast
    if not isinstance(fc, dict) or fc.get("type") not in FORECAST_TYPES:
        raise ConfigError(f"forecast.type must be one of {sorted(FORECAST_TYPES)}")
    allowed = {"type", *FORECAST_TYPES[fc["type"]]}
    extra = set(fc) - allowed
    if extra:
        raise ConfigError(f"unknown forecast fields {sorted(extra)}")
    missing = set(FORECAST_TYPES[fc["type"]]) - set(fc)
    if missing:
        raise ConfigError(f"forecast of type {fc['type']} needs {sorted(missing)}")


def parse_config(data: Dict[str, Any], base_dir: Union[str, Path] = ".") -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - set(REQUIRED) - set(OPTIONAL)
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    missing = [k for k in REQUIRED if k not in data]
    if missing:
        raise ConfigError(f"missing config fields: {missing}")
    costs = data["costs"]
    if not isinstance(costs, dict):
        raise ConfigError("costs must be an object")
    bad = set(costs) - set(COST_FIELDS)
    if bad:
        raise ConfigError(f"unknown cost fields: {sorted(bad)}")
    kwargs = dict(data)
    kwargs["costs"] = CostSettings(**costs)
    try:
        return ScenarioConfig(**kwargs, base_dir=str(base_dir))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(data, path.parent)
