"""Rebalancing controllers: a uniform-availability baseline and receding-horizon MPC."""

from __future__ import annotations

from typing import List, Optional

import numpy as np

from ..decomposed import MatchingInstance, matching_costs, solve_decomposed, solve_matching
from ..demand import GenerativeModel
from ..netflow import CostModel, DemandSample, FleetState, OutstandingDemand, RoadNetwork
from ..saa import bundle_samples, solve_saa
from .engine import Decision, Snapshot


def uniform_targets(total: int, n: int) -> np.ndarray:
    """Floor split of ``total`` over ``n`` stations, remainder to the lowest indices."""
    t = np.full(n, total // n, dtype=np.int64)
    t[: total % n] += 1
    return t


class ReactiveController:
    """Move idle vehicles so every station holds an equal share."""

    name = "reactive"

    def __init__(self, net: RoadNetwork, engine: str = "simplex"):
        self.net = net
        self.engine = engine

    def act(self, snap: Snapshot) -> Decision:
        n = self.net.n
        a = snap.fleet.a
        target = uniform_targets(int(a.sum()), n)
        surplus = np.maximum(a - target, 0)
        deficit = np.maximum(target - a, 0)
        if n == 1 or not deficit.any():
            return Decision(np.zeros((n, n), dtype=np.int64))
        cost = matching_costs(self.net)
        penalty = 1e3 * (1.0 + float(cost.max()) * n)
        x, _, _ = solve_matching(MatchingInstance(surplus, deficit, cost, penalty), self.engine)
        return Decision(x)


def first_step_tasks(x1: np.ndarray, w1: np.ndarray, samples: List[DemandSample]) -> np.ndarray:
    """Empty trips in the first planned step.

    Of the planned first-step flow on a cross edge, the part not needed for
    waiting customers or for sampled new requests is repositioning; it is
    averaged over the samples and rounded.
    """
    lam1 = np.stack([s.lam[:, :, 0] for s in samples])
    empty = np.maximum(x1[None] - w1[None] - lam1, 0).mean(axis=0)
    tasks = np.rint(empty).astype(np.int64)
    np.fill_diagonal(tasks, 0)
    return tasks


class MPCController:
    """Receding-horizon controller around the SAA program.

    ``mode=1`` solves the joint MILP; ``mode=0`` matches waiting customers
    first and then solves the rebalancing LP.  Only the first step of the
    plan is issued.  Each epoch samples with seed ``(seed, epoch)``.
    """

    def __init__(self, name: str, net: RoadNetwork, model: GenerativeModel, K: int,
                 costs: CostModel, mode: int = 0, seed: int = 0, engine: str = "simplex",
                 node_budget: int = 100_000):
        if mode not in (0, 1):
            raise ValueError("mode must be 0 or 1")
        if K < 1:
            raise ValueError("K must be at least 1")
        self.name = name
        self.net = net
        self.model = model
        self.K = K
        self.costs = costs
        self.mode = mode
        self.seed = seed
        self.engine = engine
        self.node_budget = node_budget
        self.last_plan = None

    @property
    def T(self) -> int:
        return self.costs.T

    def act(self, snap: Snapshot) -> Decision:
        samples = self.model.sample(snap.history, self.T, self.K, seed=[self.seed, snap.epoch])
        bundled = bundle_samples(samples)
        if self.mode == 1:
            plan, _ = solve_saa(snap.fleet, snap.outstanding, bundled, self.costs, self.net,
                                node_budget=self.node_budget, engine=self.engine)
            self.last_plan = plan
            return Decision(first_step_tasks(plan.x[:, :, 0], plan.w[:, :, 0], samples))
        fleet, outstanding = reserve_inbound(snap.fleet, snap.outstanding, self.net)
        res = solve_decomposed(fleet, outstanding, bundled, self.costs, self.net,
                               engine=self.engine)
        self.last_plan = res.combined
        reb = res.rebalance
        tasks = first_step_tasks(reb.x[:, :, 0], reb.w[:, :, 0], samples) + res.dispatch
        return Decision(tasks, res.dispatch.copy())


def reserve_inbound(fleet: FleetState, outstanding: OutstandingDemand,
                    net: RoadNetwork) -> tuple:
    """Set aside vehicles arriving next step at stations with waiting customers.

    The matching only sees vehicles available now, so without this it would
    send extra vehicles to customers that an inbound vehicle is about to
    collect.  Reserved vehicles leave the fleet and re-enter at their
    customer's destination.
    """
    if fleet.T < 2 or not outstanding.lambda0.any():
        return fleet, outstanding
    n, T = fleet.n, fleet.T
    v = fleet.v.copy()
    lam0 = outstanding.lambda0.copy()
    for j in range(n):
        for k in range(n):
            while lam0[j, k] > 0 and v[j, 1] > 0:
                lam0[j, k] -= 1
                v[j, 1] -= 1
                back = 2 + int(net.tau[j, k])
                if back <= T:
                    v[k, back - 1] += 1
    return FleetState(fleet.a, v, fleet.m), OutstandingDemand(lam0)
