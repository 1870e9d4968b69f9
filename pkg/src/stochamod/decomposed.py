"""Two linear programs instead of one MILP.

Waiting customers are first matched to idle vehicles with a transport LP;
the vehicles left over are then rebalanced against sampled future demand
with the waiting-free SAA program.  Both constraint matrices are totally
unimodular, so simplex vertices are integral; every solve here is passed
through :func:`certify_integral` rather than trusting that.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .lpcore import LPBuilder, LinearProgram, certify_integral, solve_lp
from .netflow import CostModel, FleetState, OutstandingDemand, Plan, RoadNetwork, ShapeError
from .saa import BundledDemand, add_flow_vars, plan_from_solution


@dataclass(frozen=True)
class MatchingInstance:
    z: np.ndarray
    y: np.ndarray
    c: np.ndarray
    drop_penalty: float

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.int64)
        y = np.asarray(self.y, dtype=np.int64)
        n = z.shape[0]
        c = np.asarray(self.c, dtype=float).reshape(n, n).copy()
        if y.shape != (n,):
            raise ShapeError(f"y has shape {y.shape}, expected ({n},)")
        if z.min(initial=0) < 0 or y.min(initial=0) < 0 or c.min(initial=0) < 0:
            raise ValueError("matching data must be non-negative")
        np.fill_diagonal(c, 0.0)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "c", c)

    @property
    def n(self) -> int:
        return self.z.shape[0]


def build_matching_lp(inst: MatchingInstance) -> LinearProgram:
    """min c.x + p * sum(u)  s.t.  u >= y - (z + inflow - outflow),  outflow <= z."""
    n = inst.n
    b = LPBuilder()
    x = np.array([[b.add_var(("x", i, j), inst.c[i, j]) for j in range(n)] for i in range(n)])
    u = [b.add_var(("u", i), inst.drop_penalty) for i in range(n)]
    for i in range(n):
        coefs: Dict[int, float] = {u[i]: 1.0}
        for j in range(n):
            if j != i:
                coefs[int(x[j, i])] = 1.0   # inflow
                coefs[int(x[i, j])] = -1.0  # outflow
        b.add_ge(coefs, float(inst.y[i] - inst.z[i]), name=("cover", i))
    for i in range(n):
        b.add_le({int(x[i, j]): 1.0 for j in range(n)}, float(inst.z[i]), name=("cap", i))
    return b.build()


def solve_matching(inst: MatchingInstance,
                   engine: str = "simplex") -> Tuple[np.ndarray, np.ndarray, float]:
    """Integral dispatch matrix, per-station drops and the LP objective."""
    lp = build_matching_lp(inst)
    sol = solve_lp(lp, engine=engine)
    if not sol.optimal:
        raise RuntimeError(f"matching LP is {sol.status}")
    vals = certify_integral(sol)
    n = inst.n
    x = vals[: n * n].reshape(n, n)
    np.fill_diagonal(x, 0)
    return x, vals[n * n:], sol.objective_value


def build_rebalance_lp(fleet: FleetState, bundled: BundledDemand, costs: CostModel,
                       net: RoadNetwork, prune_zero: bool = True) -> LinearProgram:
    """Waiting-free SAA relaxation: continuous x and u, flow rows, drop rows."""
    if not (fleet.n == bundled.n == costs.n == net.n) or fleet.T != bundled.T:
        raise ShapeError("fleet, samples, costs and network disagree on n or T")
    b = LPBuilder()
    xi = add_flow_vars(b, fleet, costs, net, integer=False)
    K = bundled.K
    for (i, j, t), (vals, cnts) in sorted(bundled.cells.items()):
        xk = int(xi[i, j, t - 1])
        for v, c in zip(vals, cnts):
            if prune_zero and v <= 0:
                continue
            u = b.add_var(("u", i, j, t, int(v)), costs.c_lambda[i, j, t - 1] * c / K)
            b.add_ge({u: 1.0, xk: 1.0}, float(v), name=("drop", i, j, t, int(v)))
    return b.build()


def solve_rebalance(fleet: FleetState, bundled: BundledDemand, costs: CostModel,
                    net: RoadNetwork, origin_step: int = 0,
                    engine: str = "simplex") -> Tuple[Plan, float]:
    lp = build_rebalance_lp(fleet, bundled, costs, net)
    sol = solve_lp(lp, engine=engine)
    if not sol.optimal:
        raise RuntimeError(f"rebalancing LP is {sol.status}")
    vals = certify_integral(sol)
    return plan_from_solution(lp, vals, fleet.n, fleet.T, origin_step), sol.objective_value


@dataclass(frozen=True)
class DecomposedResult:
    dispatch: np.ndarray        # (n, n) vehicles sent i -> j to pick up waiters at j
    dropped: np.ndarray         # (n,) waiters the matching could not cover
    rebalance: Plan             # waiting-free plan for the residual fleet
    residual: FleetState        # fleet handed to the rebalancing LP
    combined: Plan              # both stages expressed as one (x, w) plan
    rebalance_objective: float


def matching_costs(net: RoadNetwork) -> np.ndarray:
    c = net.tau.astype(float).copy()
    np.fill_diagonal(c, 0.0)
    return c


def solve_decomposed(fleet: FleetState, outstanding: OutstandingDemand, bundled: BundledDemand,
                     costs: CostModel, net: RoadNetwork, origin_step: int = 0,
                     engine: str = "simplex") -> DecomposedResult:
    """Match waiters first, then rebalance what is left.

    Matched vehicles leave the first-step supply; each re-enters as scheduled
    availability at its customer's destination.  Customers at a station are
    assigned destinations in increasing station order.
    """
    n, T = fleet.n, fleet.T
    tau = net.tau
    z = fleet.a + fleet.v[:, 0]
    lam0 = outstanding.lambda0
    y = lam0.sum(axis=1)
    drop = float(costs.c_lambda.max()) if costs.c_lambda.size else 0.0
    if y.any():
        dispatch, dropped, _ = solve_matching(MatchingInstance(z, y, matching_costs(net), drop),
                                              engine)
    else:
        dispatch, dropped = np.zeros((n, n), dtype=np.int64), np.zeros(n, dtype=np.int64)

    a = fleet.a.astype(np.int64).copy()
    v = fleet.v.astype(np.int64).copy()
    x_extra = np.zeros((n, n, T), dtype=np.int64)
    w = np.zeros((n, n, T), dtype=np.int64)
    # destinations still to be served at each pickup station
    queues: List[List[int]] = [[k for k in range(n) for _ in range(int(lam0[j, k]))]
                               for j in range(n)]
    out = dispatch.sum(axis=1)
    for i in range(n):
        local = min(int(z[i]) - int(out[i]),
                    int(y[i]) - int(dispatch[:, i].sum()) - int(dropped[i]))
        local = max(local, 0)
        take = local + int(out[i])
        from_a = min(take, int(a[i]))
        a[i] -= from_a
        v[i, 0] -= take - from_a
        for _ in range(local):
            k = queues[i].pop(0)
            _serve(i, k, 1, tau, T, w, x_extra, v)
    x_extra[:, :, 0] += dispatch
    for j in range(n):
        arrivals = sorted(1 + int(tau[i, j]) for i in range(n) for _ in range(int(dispatch[i, j])))
        for p in arrivals:
            if queues[j]:
                _serve(j, queues[j].pop(0), p, tau, T, w, x_extra, v)
            elif p <= T:
                v[j, p - 1] += 1   # surplus vehicle simply becomes available at j
    for j in range(n):
        for k in queues[j]:
            w[j, k, T - 1] += 1   # unserved within the horizon; scheduled last
    residual = FleetState(a, v, fleet.m)
    reb, obj = solve_rebalance(residual, bundled, costs, net, origin_step, engine)
    combined = Plan(reb.x + x_extra, w, origin_step)
    return DecomposedResult(dispatch, dropped, reb, residual, combined, obj)


def _serve(j: int, k: int, p: int, tau: np.ndarray, T: int, w: np.ndarray,
           x: np.ndarray, v: np.ndarray) -> None:
    """Pick up a j -> k customer at timestep p and re-inject the vehicle at k."""
    if p > T:
        w[j, k, T - 1] += 1
        return
    w[j, k, p - 1] += 1
    x[j, k, p - 1] += 1
    back = p + int(tau[j, k])
    if back <= T:
        v[k, back - 1] += 1
