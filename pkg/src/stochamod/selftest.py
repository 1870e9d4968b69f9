"""Property sweeps run by ``stochamod selftest`` and reused by the test suite."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import bounds
from .decomposed import build_rebalance_lp
from .lpcore import IntegralityError, Solution, certify_integral, solve_lp, solve_milp
from .netflow import CostModel, DemandSample, FleetState, OutstandingDemand, RoadNetwork
from .saa import build_naive_saa_milp, build_saa_milp, bundle_samples


@dataclass
class RandomInstance:
    net: RoadNetwork
    fleet: FleetState
    outstanding: OutstandingDemand
    costs: CostModel
    samples: List[DemandSample]


def random_instance(rng: np.random.Generator, max_n: int = 5, max_T: int = 6, max_K: int = 8,
                    max_m: int = 10, waiting: bool = False, max_demand: int = 3,
                    inflight: bool = True) -> RandomInstance:
    """Integer-data planning instance; ``waiting`` adds outstanding customers."""
    n = int(rng.integers(1, max_n + 1))
    T = int(rng.integers(1, max_T + 1))
    K = int(rng.integers(1, max_K + 1))
    m = int(rng.integers(0, max_m + 1))
    tau = rng.integers(1, 4, size=(n, n))
    net = RoadNetwork(tau)
    # spread m vehicles over idle slots and, optionally, future availability
    slots = n * (T if inflight else 1)
    where = rng.integers(0, slots, size=m)
    counts = np.bincount(where, minlength=slots)
    if inflight:
        grid = counts.reshape(n, T)
        a = grid[:, 0].copy()
        v = grid.copy()
        v[:, 0] = 0
    else:
        a = counts
        v = np.zeros((n, T), dtype=np.int64)
    fleet = FleetState(a, v, m)
    lam0 = np.zeros((n, n), dtype=np.int64)
    if waiting:
        lam0 = rng.integers(0, 3, size=(n, n)) * (rng.random((n, n)) < 0.4)
    c_x = rng.integers(0, 4, size=(n, n, T)).astype(float)
    c_w = np.cumsum(rng.integers(0, 3, size=(n, n, T)), axis=2).astype(float)
    c_l = rng.integers(1, 11, size=(n, n, T)).astype(float)
    costs = CostModel(c_x, c_w, c_l)
    samples = [DemandSample(rng.integers(0, max_demand + 1, size=(n, n, T))
                            * (rng.random((n, n, T)) < 0.5)) for _ in range(K)]
    return RandomInstance(net, fleet, OutstandingDemand(lam0), costs, samples)


@dataclass
class CheckResult:
    name: str
    passed: bool
    trials: int
    violations: int
    seconds: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" {self.detail}" if self.detail else ""
        rate = self.violations / self.trials if self.trials else 0.0
        return (f"{status} {self.name}: trials={self.trials} violations={self.violations} "
                f"violation_rate={rate:.4f} ({self.seconds:.1f}s){extra}")


def _timed(name: str, fn: Callable[[], Tuple[int, int, str]], ok: Callable[[int, int], bool]
           ) -> CheckResult:
    t0 = time.perf_counter()
    try:
        trials, bad, detail = fn()
    except IntegralityError as exc:
        return CheckResult(name, False, 1, 1, time.perf_counter() - t0,
                           f"integrality violated at variable {exc.tag!r} (value {exc.value:g})")
    return CheckResult(name, ok(trials, bad), trials, bad, time.perf_counter() - t0, detail)


def integrality_sweep(count: int, seed: int = 0, milp_every: int = 10,
                      corrupt: Optional[Callable[[Solution], Solution]] = None
                      ) -> Tuple[int, int, str]:
    """Solve random rebalancing LPs, certify integrality, compare a subsample with B&B.

    Returns ``(instances, objective mismatches, detail)``; a fractional
    vertex raises :class:`IntegralityError`.
    """
    rng = np.random.default_rng(seed)
    mismatches = 0
    checked = 0
    for k in range(count):
        inst = random_instance(rng)
        lp = build_rebalance_lp(inst.fleet, bundle_samples(inst.samples), inst.costs, inst.net)
        sol = solve_lp(lp)
        if corrupt is not None:
            sol = corrupt(sol)
        certify_integral(sol)
        if milp_every and k % milp_every == 0:
            ref = solve_milp(lp.as_integer())
            checked += 1
            mismatches += abs(ref.objective_value - sol.objective_value) > 1e-6
    return count, mismatches, f"milp_crosschecks={checked}"


def bundling_sweep(count: int, seed: int = 1) -> Tuple[int, int, str]:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(count):
        inst = random_instance(rng, max_n=3, max_T=3, max_K=6, max_m=4, waiting=True)
        a = solve_milp(build_saa_milp(inst.fleet, inst.outstanding, bundle_samples(inst.samples),
                                      inst.costs, inst.net))
        b = solve_milp(build_naive_saa_milp(inst.fleet, inst.outstanding, inst.samples,
                                            inst.costs, inst.net))
        bad += a.status != b.status or (a.optimal and abs(a.objective_value - b.objective_value) > 1e-9)
    return count, bad, ""


def minima_sweep(count: int, seed: int = 2) -> Tuple[int, int, str]:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(count):
        size = int(rng.integers(1, 50))
        f = rng.normal(size=size) * 10
        g = f + rng.normal(size=size) * rng.uniform(0, 5)
        bad += not bounds.verify_minima_continuity(f, g)
    return count, bad, ""


def oracle_check(trials: int, seed: int = 3, delta: float = 0.1) -> Tuple[int, int, str]:
    inst = bounds.standard_instance(perturb=0.05)
    rep = bounds.verify_oracle_inequality(inst, K=40, delta=delta, trials=trials, seed=seed)
    viol = int(round(rep.empirical_violation_rate * trials))
    return trials, viol, f"bound={rep.bound_terms['total']:.4f} delta={delta}"


def run_selftest(quick: bool = False,
                 corrupt: Optional[Callable[[Solution], Solution]] = None) -> List[CheckResult]:
    scale = 5 if quick else 1
    return [
        _timed("integrality (rebalancing LP vertices)",
               lambda: integrality_sweep(500 // scale, corrupt=corrupt), lambda t, b: b == 0),
        _timed("bundling equivalence", lambda: bundling_sweep(100 // scale), lambda t, b: b == 0),
        _timed("continuity of minima", lambda: minima_sweep(1000), lambda t, b: b == 0),
        _timed("oracle inequality", lambda: oracle_check(200 // scale),
               lambda t, b: b <= 0.1 * t),
    ]


def half_corruption(sol: Solution) -> Solution:
    """Fault injector: shifts the first value by one half."""
    vals = sol.values.copy()
    vals[0] += 0.5
    return Solution(sol.status, vals, sol.objective_value, sol.basis, sol.iterations,
                    sol.nodes, sol.names)
