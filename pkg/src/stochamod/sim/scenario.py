"""Scenario assembly, full simulation runs, and run statistics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from ..config import ScenarioConfig
from ..demand import (
    DemandTrace,
    GenerativeModel,
    bootstrap_model,
    perfect_model,
    point_model,
    poisson_model,
    sample_file_model,
)
from ..netflow import CostModel, RoadNetwork
from .controllers import MPCController, ReactiveController
from .engine import Controller, EpochRecord, ServiceRecord, Simulator

CONTROLLERS = ("reactive", "mpc-point", "mpc-saa", "mpc-perfect")
EXTRA_CONTROLLERS = ("mpc-point-milp", "mpc-saa-milp", "mpc-perfect-milp")


@dataclass
class SimStats:
    waits_s: List[int]
    request_s: List[int]
    assign_s: List[int]
    reb_tasks: int
    reb_tasks_issued: int
    unserved: int
    fleet_size: int
    fleet_count_min: int
    fleet_count_max: int
    ticks: int
    end_clock_s: int
    epochs: List[EpochRecord] = field(default_factory=list)

    @property
    def served(self) -> int:
        return len(self.waits_s)

    @property
    def mean(self) -> float:
        return float(np.mean(self.waits_s)) if self.waits_s else 0.0

    @property
    def median(self) -> float:
        return float(np.median(self.waits_s)) if self.waits_s else 0.0

    @property
    def p99(self) -> float:
        return float(np.percentile(self.waits_s, 99)) if self.waits_s else 0.0

    @classmethod
    def from_simulator(cls, sim: Simulator) -> "SimStats":
        recs = sorted(sim.served, key=lambda r: r.ident)
        return cls(
            waits_s=[r.wait_s for r in recs],
            request_s=[r.request_s for r in recs],
            assign_s=[r.assign_s for r in recs],
            reb_tasks=sim.reb_executed,
            reb_tasks_issued=sim.reb_issued,
            unserved=sim.waiting(),
            fleet_size=sim.m,
            fleet_count_min=sim.fleet_count_min,
            fleet_count_max=sim.fleet_count_max,
            ticks=sim.ticks,
            end_clock_s=sim.clock_s,
            epochs=list(sim.epochs),
        )

    def to_dict(self) -> dict:
        return {
            "mean_wait_s": self.mean,
            "median_wait_s": self.median,
            "p99_wait_s": self.p99,
            "served": self.served,
            "unserved": self.unserved,
            "reb_tasks": self.reb_tasks,
            "reb_tasks_issued": self.reb_tasks_issued,
            "fleet_size": self.fleet_size,
            "fleet_count_min": self.fleet_count_min,
            "fleet_count_max": self.fleet_count_max,
            "ticks": self.ticks,
            "end_clock_s": self.end_clock_s,
            "waits_s": self.waits_s,
            "request_s": self.request_s,
            "assign_s": self.assign_s,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def epochs_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["epoch", "clock_s", "waiting_customers", "reb_tasks_issued"])
        for e in self.epochs:
            wr.writerow([e.epoch, e.clock_s, e.waiting_customers, e.reb_tasks_issued])
        return buf.getvalue()


def simulate(net: RoadNetwork, initial_vehicles: Sequence[int], trace: DemandTrace,
             controller: Optional[Controller], horizon_T: int, tick_s: int = 6,
             controller_period_s: int = 300, duration_s: Optional[int] = None,
             drain_s: int = 3600, lookback_s: int = 4 * 3600,
             on_tick: Optional[Callable[[Simulator], None]] = None) -> SimStats:
    """Run the demand phase, then keep stepping until queues empty or ``drain_s`` passes."""
    sim = Simulator(net, initial_vehicles, trace, horizon_T, tick_s, controller_period_s,
                    lookback_s)
    if duration_s is None:
        duration_s = _default_duration(trace, controller_period_s)
    while sim.clock_s < duration_s or not sim.trace_done:
        sim.step(controller)
        if on_tick:
            on_tick(sim)
    stop = sim.clock_s + drain_s
    while sim.waiting() and sim.clock_s < stop:
        sim.step(controller)
        if on_tick:
            on_tick(sim)
    return SimStats.from_simulator(sim)


def _default_duration(trace: DemandTrace, period_s: int) -> int:
    return int(math.ceil(trace.end_s / period_s) * period_s)


def network_of(cfg: ScenarioConfig) -> RoadNetwork:
    return RoadNetwork(np.array(cfg.travel_time, dtype=np.int64), cfg.dt_s)


def costs_of(cfg: ScenarioConfig, net: RoadNetwork) -> CostModel:
    c = cfg.costs
    return CostModel.default(net, cfg.horizon_T, c.c_x_scale, c.c_wait_scale, c.c_drop)


def load_trace(cfg: ScenarioConfig) -> DemandTrace:
    return DemandTrace.read_csv(cfg.resolve(cfg.demand_trace), cfg.n, cfg.duration_s)


def forecast_model(cfg: ScenarioConfig, trace: DemandTrace) -> GenerativeModel:
    fc = cfg.forecast
    n, T, dt = cfg.n, cfg.horizon_T, cfg.dt_s
    kind = fc["type"]
    if kind == "empirical":
        span = max(trace.end_s, 1)
        counts = trace.binned(0, span, 1)[:, :, 0].astype(float)
        rate = counts * dt / span
        return poisson_model(np.repeat(rate[:, :, None], T, axis=2))
    if kind == "poisson":
        per_pair = float(fc["rate_per_hour"]) * dt / 3600.0 / max(n * (n - 1), 1)
        mean = np.full((n, n, T), per_pair)
        if n > 1:
            mean[np.arange(n), np.arange(n), :] = 0.0
        return poisson_model(mean)
    if kind == "bootstrap":
        days = [DemandTrace.read_csv(cfg.resolve(p), n) for p in fc["traces"]]
        return bootstrap_model(days, dt)
    return sample_file_model(cfg.resolve(fc["path"]), n)


def make_controller(name: str, cfg: ScenarioConfig, net: RoadNetwork, trace: DemandTrace,
                    seed: int, model: Optional[GenerativeModel] = None) -> Controller:
    if name == "reactive":
        return ReactiveController(net, cfg.engine)
    costs = costs_of(cfg, net)
    base = model if model is not None else forecast_model(cfg, trace)
    mode = 1 if name.endswith("-milp") else 0
    stem = name[: -len("-milp")] if mode else name
    if stem == "mpc-saa":
        return MPCController(name, net, base, cfg.K, costs, mode, seed, cfg.engine)
    if stem == "mpc-point":
        return MPCController(name, net, point_model(base), 1, costs, mode, seed, cfg.engine)
    if stem == "mpc-perfect":
        return MPCController(name, net, perfect_model(trace, strict=False), 1, costs, mode,
                             seed, cfg.engine)
    raise ValueError(f"unknown controller {name!r}; expected one of "
                     f"{CONTROLLERS + EXTRA_CONTROLLERS}")


def run_scenario(cfg: ScenarioConfig, controller: Union[str, Controller],
                 seed: Optional[int] = None, trace: Optional[DemandTrace] = None,
                 model: Optional[GenerativeModel] = None) -> SimStats:
    """Simulate ``cfg`` under the named (or given) controller; deterministic in ``seed``."""
    seed = cfg.seed if seed is None else seed
    net = network_of(cfg)
    trace = load_trace(cfg) if trace is None else trace
    if isinstance(controller, str):
        controller = make_controller(controller, cfg, net, trace, seed, model)
    return simulate(net, cfg.initial_vehicles, trace, controller, cfg.horizon_T, cfg.tick_s,
                    cfg.controller_period_s, cfg.duration_s, cfg.drain_s, cfg.lookback_s)
