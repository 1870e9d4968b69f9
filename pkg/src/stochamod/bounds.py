"""Finite-sample guarantees for the SAA controller, and numeric checks of them.

All logarithms are natural.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .netflow import (
    CostModel,
    DemandSample,
    FleetState,
    OutstandingDemand,
    Plan,
    RoadNetwork,
)
from .saa import Cell, bundle_samples, expected_objective, solve_saa

NORMALIZATION_TOL = 1e-9


class ScaleError(ValueError):
    """Instance too large for exact enumeration."""


def _check_common(K: float, m: int, delta: float) -> None:
    if K < 1:
        raise ValueError("K must be at least 1")
    if m < 2:
        raise ValueError("fleet size must be at least 2 (log m vanishes at m = 1)")
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")


def stochastic_error(sigma: float, K: int, n: int, T: int, m: int, delta: float) -> float:
    """``(2 sigma / sqrt K) * sqrt(n^2 T log m + log(1/sqrt delta))``."""
    _check_common(K, m, delta)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    return 2.0 * sigma / math.sqrt(K) * math.sqrt(n * n * T * math.log(m) - 0.5 * math.log(delta))


def model_error(chi: Sequence[float], var_norm: float) -> float:
    """``||chi||_2 * sqrt(var_norm)`` where ``var_norm`` is Var of ``||lambda||_2`` under P."""
    chi = np.asarray(chi, dtype=float)
    if var_norm < 0 or np.any(chi < 0):
        raise ValueError("chi entries and var_norm must be non-negative")
    return float(np.linalg.norm(chi) * math.sqrt(var_norm))


def required_samples(epsilon: float, sigma: float, n: int, T: int, m: int, delta: float) -> int:
    """Smallest integer K with ``K >= 64 sigma^2 eps^-2 (n^2 T log m - log(delta)/2)``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    _check_common(1, m, delta)
    value = 64.0 * sigma ** 2 / epsilon ** 2 * (n * n * T * math.log(m) - 0.5 * math.log(delta))
    # guard against 783.9999999 style round-off pushing the ceiling up a notch
    return int(math.ceil(value - 1e-9 * max(1.0, value)))


def bundled_size_bound(K: int, n: int, T: int, b: float, delta: float) -> int:
    """High-probability cap on the bundled drop-variable count.

    Each of the ``n^2 T`` cells holds at most ``4 b log(K n^2 T / delta)``
    distinct values; the total can never exceed ``K n^2 T``.
    """
    if K < 1 or n < 1 or T < 1 or b <= 0 or not 0 < delta < 1:
        raise ValueError("bundled_size_bound needs positive K, n, T, b and delta in (0, 1)")
    cells = n * n * T
    return int(min(math.floor(4.0 * b * cells * math.log(K * cells / delta)), K * cells))


def chi_square_divergence(p_hat: Sequence[float], p: Sequence[float]) -> float:
    """``sum_l p(l) (1 - p_hat(l)/p(l))^2``; ``inf`` if ``p_hat`` puts mass where ``p`` has none."""
    p_hat = np.asarray(p_hat, dtype=float)
    p = np.asarray(p, dtype=float)
    if p_hat.shape != p.shape:
        raise ValueError("distributions must share a support enumeration")
    for name, dist in (("p_hat", p_hat), ("p", p)):
        if np.any(dist < 0) or abs(dist.sum() - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"{name} is not a probability vector")
    pos = p > 0
    if np.any(p_hat[~pos] > 0):
        return math.inf
    return float(np.sum(p[pos] * (1.0 - p_hat[pos] / p[pos]) ** 2))


def verify_minima_continuity(f: Sequence[float], g: Sequence[float]) -> bool:
    """Check ``f(argmin g) <= min f + 2 max|f - g|`` on a finite table, without tolerance."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.size == 0:
        raise ValueError("empty domain")
    if f.shape != g.shape:
        raise ValueError("f and g must be tabulated on the same domain")
    xg = int(np.argmin(g))
    xf = int(np.argmin(f))
    gap = float(np.max(np.abs(f - g)))
    # tie-broken argmins of g: the check must hold for every minimiser
    ok = all(f[k] <= f[xf] + 2.0 * gap for k in np.flatnonzero(g == g[xg]))
    return bool(ok)


@dataclass(frozen=True)
class ErrorBudget:
    stochastic_error: float
    model_error: float
    sigma2: float
    b: float
    K: int
    n: int
    T: int
    m: int
    delta: float

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if min(self.stochastic_error, self.model_error, self.sigma2, self.b) < 0:
            raise ValueError("budget components must be non-negative")

    @property
    def total(self) -> float:
        return self.stochastic_error + self.model_error

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total"] = self.total
        return d


Marginals = Dict[Cell, Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class ValidationInstance:
    """A tiny planning problem whose demand cells are independent and finitely supported.

    ``true`` and ``model`` map each cell ``(i, j, t)`` to ``(support, probs)``
    over a shared support; cells absent from ``true`` carry no demand.
    """

    net: RoadNetwork
    fleet: FleetState
    outstanding: OutstandingDemand
    costs: CostModel
    true: Marginals
    model: Marginals

    @property
    def n(self) -> int:
        return self.fleet.n

    @property
    def T(self) -> int:
        return self.fleet.T

    @property
    def m(self) -> int:
        return int(self.fleet.m)


MAX_N, MAX_T, MAX_SUPPORT = 2, 2, 4


def _check_scale(inst: ValidationInstance) -> None:
    if inst.n > MAX_N or inst.T > MAX_T:
        raise ScaleError(f"exact enumeration limited to n <= {MAX_N}, T <= {MAX_T}")
    for cell, (sup, _) in list(inst.true.items()) + list(inst.model.items()):
        if len(sup) > MAX_SUPPORT:
            raise ScaleError(f"cell {cell} has {len(sup)} support points (max {MAX_SUPPORT})")
    if set(inst.model) != set(inst.true):
        raise ValueError("true and model marginals must cover the same cells")


def enumerate_plans(inst: ValidationInstance) -> List[Plan]:
    """Every integer plan meeting flow and waiter conservation with entries <= m."""
    n, T, m = inst.n, inst.T, inst.m
    lam0 = inst.outstanding.lambda0
    xs = np.array(list(itertools.product(range(m + 1), repeat=n * n * T)),
                  dtype=np.int64).reshape(-1, n, n, T)
    resid = xs.sum(axis=2) - inst.fleet.supply()[None]
    for j in range(n):
        for i in range(n):
            d = int(inst.net.tau[j, i])
            if d < T:
                resid[:, i, d:] -= xs[:, j, i, : T - d]
    xs = xs[np.all(resid == 0, axis=(1, 2))]
    # waiter schedules per (i, j): compositions of lam0[i, j] over T steps
    w_parts = []
    for i in range(n):
        for j in range(n):
            w_parts.append([c for c in itertools.product(range(int(lam0[i, j]) + 1), repeat=T)
                            if sum(c) == lam0[i, j]])
    plans = []
    for x in xs:
        for combo in itertools.product(*w_parts):
            plans.append(Plan(x, np.array(combo, dtype=np.int64).reshape(n, n, T)))
    return plans


def draw_samples(marginals: Marginals, n: int, T: int, K: int,
                 rng: np.random.Generator) -> List[DemandSample]:
    lam = np.zeros((K, n, n, T), dtype=np.int64)
    for (i, j, t), (sup, p) in sorted(marginals.items()):
        lam[:, i, j, t - 1] = rng.choice(np.asarray(sup), size=K, p=np.asarray(p))
    return [DemandSample(s) for s in lam]


def hoeffding_sigma(inst: ValidationInstance) -> float:
    """Variance proxy of the penalty term for bounded independent cells.

    Each cell contributes ``(c_lambda * range / 2)^2``, the Hoeffding-lemma
    proxy for a bounded variable; the proxy also bounds the sub-exponential
    parameter.
    """
    total = 0.0
    for (i, j, t), (sup, _) in inst.true.items():
        rng = float(np.max(sup) - np.min(sup))
        total += (inst.costs.c_lambda[i, j, t - 1] * rng / 2.0) ** 2
    return math.sqrt(total)


def exact_norm_variance(marginals: Marginals) -> float:
    """Var of ``||lambda||_2`` by enumerating the product support."""
    cells = sorted(marginals)
    if not cells:
        return 0.0
    sq = [np.asarray(marginals[c][0], dtype=float) ** 2 for c in cells]
    ps = [np.asarray(marginals[c][1], dtype=float) for c in cells]
    total = sq[0]
    prob = ps[0]
    for s, p in zip(sq[1:], ps[1:]):
        total = np.add.outer(total, s).ravel()
        prob = np.multiply.outer(prob, p).ravel()
    norms = np.sqrt(total)
    mu = float(norms @ prob)
    return max(float(((norms - mu) ** 2) @ prob), 0.0)


def instance_budget(inst: ValidationInstance, K: int, delta: float,
                    sigma: Optional[float] = None) -> ErrorBudget:
    """Bound terms for the instance; the model term is scaled by the largest drop penalty."""
    sigma = hoeffding_sigma(inst) if sigma is None else sigma
    chi = [math.sqrt(chi_square_divergence(inst.model[c][1], inst.true[c][1]))
           for c in sorted(inst.true)]
    c_max = float(inst.costs.c_lambda.max())
    return ErrorBudget(
        stochastic_error=stochastic_error(sigma, K, inst.n, inst.T, inst.m, delta),
        model_error=c_max * model_error(chi, exact_norm_variance(inst.true)),
        sigma2=sigma ** 2, b=1.0, K=K, n=inst.n, T=inst.T, m=inst.m, delta=delta)


@dataclass(frozen=True)
class OracleReport:
    bound_terms: dict
    empirical_violation_rate: float
    trials: int
    seed: int
    optimum: float
    suboptimality: List[float]

    @property
    def passed(self) -> bool:
        return self.empirical_violation_rate <= self.bound_terms["delta"]

    def to_dict(self) -> dict:
        return {"bound_terms": self.bound_terms,
                "empirical_violation_rate": self.empirical_violation_rate,
                "trials": self.trials, "seed": self.seed, "optimum": self.optimum,
                "max_suboptimality": max(self.suboptimality, default=0.0)}


def verify_oracle_inequality(inst: ValidationInstance, K: int, delta: float, trials: int,
                             seed: int = 0, sigma: Optional[float] = None) -> OracleReport:
    """Monte Carlo check that half the true suboptimality of SAA stays within the bound.

    Each trial draws K samples from the model marginals, solves the SAA
    program, and scores the plan under the exact expectation of the true
    marginals.  The optimum is found by exhaustive search.
    """
    _check_scale(inst)
    plans = enumerate_plans(inst)
    if not plans:
        raise ValueError("validation instance has no feasible plan")
    f_star = min(expected_objective(p, inst.true, inst.costs) for p in plans)
    budget = instance_budget(inst, K, delta, sigma)
    bound = budget.total
    gaps = []
    violations = 0
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        samples = draw_samples(inst.model, inst.n, inst.T, K, rng)
        plan, _ = solve_saa(inst.fleet, inst.outstanding, bundle_samples(samples),
                            inst.costs, inst.net)
        gap = expected_objective(plan, inst.true, inst.costs) - f_star
        gaps.append(float(gap))
        violations += int(0.5 * gap > bound)
    return OracleReport(budget.to_dict(), violations / trials if trials else 0.0,
                        trials, seed, float(f_star), gaps)


def standard_instance(perturb: float = 0.0, drop: float = 4.0) -> ValidationInstance:
    """Two stations, two steps, three vehicles, demand on every cross cell.

    ``perturb`` shifts probability mass in the model marginals; 0 gives P_hat = P.
    """
    net = RoadNetwork.uniform(2, 1)
    T = 2
    fleet = FleetState.idle([2, 1], T)
    costs = CostModel.uniform(2, T, move=1.0, wait=0.0, drop=drop)
    support = np.array([0, 1, 2, 3])
    p = np.array([0.4, 0.3, 0.2, 0.1])
    q = p + perturb * np.array([-1.0, 0.0, 0.0, 1.0])
    if np.any(q < 0):
        raise ValueError("perturbation too large")
    true = {}
    model = {}
    for t in range(1, T + 1):
        for i, j in ((0, 1), (1, 0)):
            true[(i, j, t)] = (support, p)
            model[(i, j, t)] = (support, q)
    return ValidationInstance(net, fleet, OutstandingDemand.none(2), costs, true, model)
