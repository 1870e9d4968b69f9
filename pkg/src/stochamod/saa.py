"""Sample-average surrogate of the stochastic rebalancing problem.

The drop penalty ``E[(lambda + w - x)_+]`` is replaced by the empirical mean
over K demand samples and linearised with one auxiliary ``u`` per sample.
Samples that agree on a given ``(i, j, t)`` need only one ``u``, weighted by
its multiplicity; :func:`bundle_samples` performs that deduplication.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .lpcore import LPBuilder, LinearProgram, Solution, certify_integral, solve_milp
from .netflow import (
    CostModel,
    DemandSample,
    FleetState,
    OutstandingDemand,
    Plan,
    RoadNetwork,
    ShapeError,
)

Cell = Tuple[int, int, int]


@dataclass(frozen=True)
class BundledDemand:
    """Deduplicated samples: ``cells[(i, j, t)] = (values, counts)``.

    ``t`` is the 1-based timestep.  ``values`` is strictly increasing and
    ``counts`` sums to ``K`` for every cell.
    """

    cells: Dict[Cell, Tuple[np.ndarray, np.ndarray]]
    K: int
    n: int
    T: int

    @property
    def num_unique(self) -> int:
        return sum(len(v) for v, _ in self.cells.values())

    def unique_counts(self) -> np.ndarray:
        out = np.zeros((self.n, self.n, self.T), dtype=np.int64)
        for (i, j, t), (vals, _) in self.cells.items():
            out[i, j, t - 1] = len(vals)
        return out

    def mean(self) -> np.ndarray:
        out = np.zeros((self.n, self.n, self.T))
        for (i, j, t), (vals, cnts) in self.cells.items():
            out[i, j, t - 1] = float(vals @ cnts) / self.K
        return out

    def truncate(self, T: int) -> "BundledDemand":
        cells = {c: vc for c, vc in self.cells.items() if c[2] <= T}
        return BundledDemand(cells, self.K, self.n, T)


def _stack(samples: Sequence[DemandSample]) -> np.ndarray:
    if len(samples) == 0:
        raise ValueError("need at least one demand sample")
    shape = samples[0].lam.shape
    for s in samples:
        if s.lam.shape != shape:
            raise ShapeError(f"sample shapes differ: {s.lam.shape} vs {shape}")
    return np.stack([s.lam for s in samples])


def bundle_samples(samples: Sequence[DemandSample]) -> BundledDemand:
    """Collapse K samples into per-cell (value, multiplicity) lists."""
    lam = _stack(samples)
    K, n, _, T = lam.shape
    ordered = np.sort(lam, axis=0)
    cells: Dict[Cell, Tuple[np.ndarray, np.ndarray]] = {}
    for i in range(n):
        for j in range(n):
            for t in range(T):
                col = ordered[:, i, j, t]
                starts = np.flatnonzero(np.r_[True, col[1:] != col[:-1]])
                counts = np.diff(np.r_[starts, K])
                vals = col[starts]
                vals.setflags(write=False)
                counts.setflags(write=False)
                cells[(i, j, t + 1)] = (vals, counts)
    return BundledDemand(cells, K, n, T)


def _check_dims(fleet: FleetState, outstanding: OutstandingDemand, costs: CostModel,
                net: RoadNetwork, n: int, T: int) -> None:
    if not (fleet.n == outstanding.n == costs.n == net.n == n):
        raise ShapeError("station counts disagree across fleet, outstanding, costs, network, samples")
    if not (fleet.T == costs.T == T):
        raise ShapeError(f"horizons disagree: fleet T={fleet.T}, costs T={costs.T}, samples T={T}")


def add_flow_vars(b: LPBuilder, fleet: FleetState, costs: CostModel, net: RoadNetwork,
                  integer: bool) -> np.ndarray:
    """Create every x_ijt and the flow-conservation rows; returns the index array."""
    n, T = fleet.n, fleet.T
    xi = np.empty((n, n, T), dtype=np.int64)
    for i in range(n):
        for j in range(n):
            for t in range(T):
                xi[i, j, t] = b.add_var(("x", i, j, t + 1), costs.c_x[i, j, t], integer=integer)
    s = fleet.supply()
    for t in range(T):
        for i in range(n):
            coefs: Dict[int, float] = {}
            for j in range(n):
                coefs[int(xi[i, j, t])] = coefs.get(int(xi[i, j, t]), 0.0) + 1.0
                dep = t - int(net.tau[j, i])
                if dep >= 0:
                    k = int(xi[j, i, dep])
                    coefs[k] = coefs.get(k, 0.0) - 1.0
            b.add_eq(coefs, float(s[i, t]), name=("flow", i, t + 1))
    return xi


def _build(fleet: FleetState, outstanding: OutstandingDemand,
           scenarios: Dict[Cell, List[Tuple[object, int, int]]], K: int,
           costs: CostModel, net: RoadNetwork, integer: bool, prune_zero: bool) -> LinearProgram:
    """Shared builder; ``scenarios[cell]`` lists ``(u-tag, value, multiplicity)``."""
    n, T = fleet.n, fleet.T
    b = LPBuilder()
    xi = add_flow_vars(b, fleet, costs, net, integer)
    lam0 = outstanding.lambda0
    wi: Dict[Cell, int] = {}
    # w is only created where customers wait; elsewhere it is forced to zero
    for i in range(n):
        for j in range(n):
            if lam0[i, j] == 0:
                continue
            idx = []
            for t in range(T):
                k = b.add_var(("w", i, j, t + 1), costs.c_w[i, j, t], integer=integer)
                wi[(i, j, t + 1)] = k
                idx.append(k)
            b.add_eq({k: 1.0 for k in idx}, float(lam0[i, j]), name=("wait", i, j))
    for (i, j, t), entries in sorted(scenarios.items()):
        w_k = wi.get((i, j, t))
        x_k = int(xi[i, j, t - 1])
        for tag, value, mult in entries:
            if prune_zero and value <= 0 and w_k is None:
                continue  # u >= value - x is implied by u >= 0
            weight = costs.c_lambda[i, j, t - 1] * mult / K
            u = b.add_var(("u", i, j, t) + tag, weight, integer=integer)
            coefs = {u: 1.0, x_k: 1.0}
            if w_k is not None:
                coefs[w_k] = -1.0
            b.add_ge(coefs, float(value), name=("drop", i, j, t) + tag)
    return b.build()


def build_saa_milp(fleet: FleetState, outstanding: OutstandingDemand, bundled: BundledDemand,
                   costs: CostModel, net: RoadNetwork, integer: bool = True,
                   prune_zero: bool = True) -> LinearProgram:
    """Bundled SAA program: one drop variable per distinct sample value.

    ``w`` variables exist only for origin/destination pairs with waiting
    customers.  With ``prune_zero`` the drop variable of a zero sample value
    is skipped when no ``w`` enters its row, since it is identically zero.
    """
    _check_dims(fleet, outstanding, costs, net, bundled.n, bundled.T)
    scen = {cell: [((int(v),), int(v), int(c)) for v, c in zip(vals, cnts)]
            for cell, (vals, cnts) in bundled.cells.items()}
    return _build(fleet, outstanding, scen, bundled.K, costs, net, integer, prune_zero)


def build_naive_saa_milp(fleet: FleetState, outstanding: OutstandingDemand,
                         samples: Sequence[DemandSample], costs: CostModel,
                         net: RoadNetwork, integer: bool = True) -> LinearProgram:
    """Unbundled SAA program with one drop variable per sample and cell."""
    lam = _stack(samples)
    K, n, _, T = lam.shape
    _check_dims(fleet, outstanding, costs, net, n, T)
    scen = {(i, j, t + 1): [(("k", k), int(lam[k, i, j, t]), 1) for k in range(K)]
            for i in range(n) for j in range(n) for t in range(T)}
    return _build(fleet, outstanding, scen, K, costs, net, integer, prune_zero=False)


def plan_from_solution(lp: LinearProgram, values: np.ndarray, n: int, T: int,
                       origin_step: int = 0, objective: float = None) -> Plan:
    x = np.zeros((n, n, T))
    w = np.zeros((n, n, T))
    for k, name in enumerate(lp.names):
        if name[0] == "x":
            x[name[1], name[2], name[3] - 1] = values[k]
        elif name[0] == "w":
            w[name[1], name[2], name[3] - 1] = values[k]
    return Plan(x, w, origin_step)


def solve_saa(fleet: FleetState, outstanding: OutstandingDemand, bundled: BundledDemand,
              costs: CostModel, net: RoadNetwork, node_budget: int = 100_000,
              origin_step: int = 0, engine: str = "simplex") -> Tuple[Plan, float]:
    """Solve the bundled SAA MILP; returns the plan and its optimal objective."""
    lp = build_saa_milp(fleet, outstanding, bundled, costs, net)
    sol = solve_milp(lp, node_budget=node_budget, engine=engine)
    if not sol.optimal:
        raise RuntimeError(f"SAA program is {sol.status}")
    vals = certify_integral(sol, mask=lp.integer)
    return plan_from_solution(lp, vals, fleet.n, fleet.T, origin_step), sol.objective_value


def evaluate_objective(plan: Plan, samples: Sequence[DemandSample],
                       outstanding: OutstandingDemand, costs: CostModel) -> float:
    """Surrogate objective of ``plan`` with the drop variables eliminated."""
    lam = _stack(samples)
    if lam.shape[1:] != plan.x.shape or costs.c_x.shape != plan.x.shape:
        raise ShapeError(f"plan {plan.x.shape}, samples {lam.shape[1:]}, costs {costs.c_x.shape}")
    if outstanding.n != plan.n:
        raise ShapeError("outstanding demand has the wrong station count")
    x = plan.x.astype(float)
    w = plan.w.astype(float)
    drop = np.maximum(lam + w[None] - x[None], 0.0).mean(axis=0)
    return float((costs.c_x * x).sum() + (costs.c_w * w).sum() + (costs.c_lambda * drop).sum())


def expected_objective(plan: Plan, marginals: Dict[Cell, Tuple[np.ndarray, np.ndarray]],
                       costs: CostModel) -> float:
    """True objective under independent per-cell marginals ``(support, probs)``.

    Cells missing from ``marginals`` carry zero demand.
    """
    x = plan.x.astype(float)
    w = plan.w.astype(float)
    total = float((costs.c_x * x).sum() + (costs.c_w * w).sum())
    n, _, T = x.shape
    for i in range(n):
        for j in range(n):
            for t in range(T):
                gap = w[i, j, t] - x[i, j, t]
                if (i, j, t + 1) in marginals:
                    sup, p = marginals[(i, j, t + 1)]
                    e = float(np.maximum(sup + gap, 0.0) @ p)
                else:
                    e = max(gap, 0.0)
                total += costs.c_lambda[i, j, t] * e
    return total
