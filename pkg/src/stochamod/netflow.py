"""Time-expanded fleet model: road network, fleet availability, demand and plans.

Array conventions used throughout the package:

* stations are 0-based (``0 <= i < n``);
* the time axis of every ``(..., T)`` array is 0-based in storage, with
  storage index ``t - 1`` holding timestep ``t`` of the planning horizon
  ``1..T``.  Functions taking or reporting a *timestep* use the 1-based
  value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np


class ShapeError(ValueError):
    """Raised when arrays handed to a model operation disagree on n or T."""


def _frozen_int_array(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if arr.size and not np.all(arr == np.round(arr)):
        raise ValueError(f"{name} must hold integers")
    arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ValueError(f"{name} must be non-negative")
    arr.setflags(write=False)
    return arr


def _frozen_float_array(values, shape: Tuple[int, ...], name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(shape, float(arr))
    if arr.shape != shape:
        raise ShapeError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min(initial=0.0) < 0:
        raise ValueError(f"{name} must be finite and non-negative")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RoadNetwork:
    """Fully connected station graph with integer travel times in timesteps.

    ``tau[i, i]`` is forced to 1: it is the idling edge that lets a vehicle
    stay at its station from one timestep to the next.
    """

    tau: np.ndarray
    dt_s: int = 300

    def __post_init__(self):
        tau = np.array(self.tau)
        if tau.ndim != 2 or tau.shape[0] != tau.shape[1] or tau.shape[0] < 1:
            raise ShapeError(f"tau must be a non-empty square matrix, got {tau.shape}")
        if not np.all(tau == np.round(tau)) or tau.min() < 1:
            raise ValueError("travel times must be positive integers")
        tau = tau.astype(np.int64)
        np.fill_diagonal(tau, 1)
        tau.setflags(write=False)
        object.__setattr__(self, "tau", tau)
        if int(self.dt_s) != self.dt_s or self.dt_s <= 0:
            raise ValueError("dt_s must be a positive integer")
        object.__setattr__(self, "dt_s", int(self.dt_s))

    @property
    def n(self) -> int:
        return self.tau.shape[0]

    @classmethod
    def uniform(cls, n: int, travel: int = 1, dt_s: int = 300) -> "RoadNetwork":
        return cls(np.full((n, n), travel, dtype=np.int64), dt_s)


@dataclass(frozen=True)
class FleetState:
    """Idle vehicles ``a`` (n,) and scheduled availability ``v`` (n, T).

    ``m`` is the total fleet size; it may exceed ``a.sum() + v.sum()`` because
    vehicles that become free after the horizon are not listed in ``v``.
    """

    a: np.ndarray
    v: np.ndarray
    m: Optional[int] = None

    def __post_init__(self):
        a = _frozen_int_array(self.a, 1, "a")
        v = _frozen_int_array(self.v, 2, "v")
        if v.shape[0] != a.shape[0]:
            raise ShapeError(f"v has {v.shape[0]} stations, a has {a.shape[0]}")
        if v.shape[1] < 1:
            raise ShapeError("horizon T must be at least 1")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "v", v)
        listed = int(a.sum() + v.sum())
        m = listed if self.m is None else int(self.m)
        if m < listed:
            raise ValueError(f"fleet size m={m} smaller than the {listed} listed vehicles")
        object.__setattr__(self, "m", m)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def T(self) -> int:
        return self.v.shape[1]

    @classmethod
    def idle(cls, a, T: int, m: Optional[int] = None) -> "FleetState":
        a = np.asarray(a)
        return cls(a, np.zeros((a.shape[0], T), dtype=np.int64), m)

    def supply(self) -> np.ndarray:
        """All ``s_it`` at once, shape (n, T)."""
        s = self.v.copy()
        s[:, 0] += self.a
        return s


@dataclass(frozen=True)
class OutstandingDemand:
    """Customers already waiting: ``lambda0[i, j]`` want to go from i to j."""

    lambda0: np.ndarray

    def __post_init__(self):
        lam = _frozen_int_array(self.lambda0, 2, "lambda0")
        if lam.shape[0] != lam.shape[1]:
            raise ShapeError(f"lambda0 must be square, got {lam.shape}")
        object.__setattr__(self, "lambda0", lam)

    @property
    def n(self) -> int:
        return self.lambda0.shape[0]

    @classmethod
    def none(cls, n: int) -> "OutstandingDemand":
        return cls(np.zeros((n, n), dtype=np.int64))

    def per_station(self) -> np.ndarray:
        return self.lambda0.sum(axis=1)


@dataclass(frozen=True)
class DemandSample:
    """One realization ``lam[i, j, t-1]`` of future trip requests."""

    lam: np.ndarray

    def __post_init__(self):
        lam = _frozen_int_array(self.lam, 3, "lam")
        if lam.shape[0] != lam.shape[1]:
            raise ShapeError(f"lam must have shape (n, n, T), got {lam.shape}")
        object.__setattr__(self, "lam", lam)

    @property
    def n(self) -> int:
        return self.lam.shape[0]

    @property
    def T(self) -> int:
        return self.lam.shape[2]


@dataclass(frozen=True)
class Plan:
    """Vehicle flows ``x`` and waiting-customer service ``w``, both (n, n, T).

    ``origin_step`` records the absolute controller epoch the plan was built
    at; it is bookkeeping only.
    """

    x: np.ndarray
    w: np.ndarray
    origin_step: int = 0

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        w = np.zeros_like(x) if self.w is None else np.array(self.w, dtype=float)
        if x.ndim != 3 or x.shape[0] != x.shape[1]:
            raise ShapeError(f"x must have shape (n, n, T), got {x.shape}")
        if w.shape != x.shape:
            raise ShapeError(f"w shape {w.shape} differs from x shape {x.shape}")
        if np.all(x == np.round(x)) and np.all(w == np.round(w)):
            x = x.astype(np.int64)
            w = w.astype(np.int64)
        x.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def T(self) -> int:
        return self.x.shape[2]

    def first_step(self) -> np.ndarray:
        """Departures of timestep 1, shape (n, n)."""
        return np.array(self.x[:, :, 0])


@dataclass(frozen=True)
class CostModel:
    """Movement cost ``c_x``, waiting cost ``c_w`` and drop penalty ``c_lambda``.

    All three are (n, n, T) arrays.  Self-loop movement is always free.
    """

    c_x: np.ndarray
    c_w: np.ndarray
    c_lambda: np.ndarray

    def __post_init__(self):
        c_x = np.array(self.c_x, dtype=float)
        if c_x.ndim != 3:
            raise ShapeError(f"c_x must have shape (n, n, T), got {c_x.shape}")
        shape = c_x.shape
        c_x = _frozen_float_array(c_x, shape, "c_x").copy()
        for i in range(shape[0]):
            c_x[i, i, :] = 0.0
        c_x.setflags(write=False)
        c_w = _frozen_float_array(self.c_w, shape, "c_w")
        if shape[2] > 1 and np.any(np.diff(c_w, axis=2) < 0):
            raise ValueError("waiting cost must be non-decreasing in t")
        c_lam = _frozen_float_array(self.c_lambda, shape, "c_lambda")
        object.__setattr__(self, "c_x", c_x)
        object.__setattr__(self, "c_w", c_w)
        object.__setattr__(self, "c_lambda", c_lam)

    @property
    def n(self) -> int:
        return self.c_x.shape[0]

    @property
    def T(self) -> int:
        return self.c_x.shape[2]

    @classmethod
    def uniform(cls, n: int, T: int, move: float = 1.0, wait: float = 0.0,
                drop: float = 10.0) -> "CostModel":
        """Scalar fill: every cross edge costs ``move`` per trip."""
        shape = (n, n, T)
        return cls(np.full(shape, move), np.full(shape, wait), np.full(shape, drop))

    @classmethod
    def default(cls, net: RoadNetwork, T: int, move_scale: float = 1.0,
                wait_scale: float = 1.0, drop: Optional[float] = None) -> "CostModel":
        """Distance-proportional movement, linear waiting, large drop penalty.

        ``c_x[i,j,t] = move_scale * tau[i,j]``, ``c_w[i,j,t] = wait_scale * t * dt_s``
        and ``c_lambda = 100 * max(tau)`` unless ``drop`` is given.
        """
        n = net.n
        c_x = np.repeat(move_scale * net.tau[:, :, None].astype(float), T, axis=2)
        steps = np.arange(1, T + 1, dtype=float) * net.dt_s * wait_scale
        c_w = np.broadcast_to(steps, (n, n, T))
        if drop is None:
            drop = 100.0 * float(net.tau.max())
        return cls(c_x, c_w, np.full((n, n, T), float(drop)))


def availability(fleet: FleetState, t: int) -> np.ndarray:
    """Vehicles available at every station at timestep ``t`` (1-based)."""
    if not 1 <= t <= fleet.T:
        raise IndexError(f"timestep {t} outside horizon 1..{fleet.T}")
    if t == 1:
        return fleet.a + fleet.v[:, 0]
    return fleet.v[:, t - 1].copy()


def arrivals(x: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Vehicles arriving at each station per timestep inside the horizon.

    ``arr[i, t-1] = sum_j x[j, i, t - tau[j, i]]`` over departures with
    ``t - tau[j, i] >= 1``; departures landing after T are dropped.
    """
    n, _, T = x.shape
    arr = np.zeros((n, T), dtype=np.result_type(x, np.int64))
    for j in range(n):
        for i in range(n):
            d = int(tau[j, i])
            if d < T:
                arr[i, d:] += x[j, i, : T - d]
    return arr


def _check_dims(plan: Plan, n: int, T: Optional[int] = None) -> None:
    if plan.n != n or (T is not None and plan.T != T):
        raise ShapeError(f"plan is (n={plan.n}, T={plan.T}), expected (n={n}, T={T})")


def flow_residual(plan: Plan, fleet: FleetState, net: RoadNetwork) -> np.ndarray:
    """departures - arrivals - supply per (station, timestep); zero when conserved."""
    _check_dims(plan, fleet.n, fleet.T)
    if net.n != fleet.n:
        raise ShapeError(f"network has {net.n} stations, fleet has {fleet.n}")
    out = plan.x.sum(axis=1)
    return out - arrivals(plan.x, net.tau) - fleet.supply()


def check_flow_conservation(plan: Plan, fleet: FleetState, net: RoadNetwork,
                            tol: float = 1e-9) -> Tuple[bool, Optional[Tuple[int, int]]]:
    """Check departures minus in-horizon arrivals equals supply everywhere.

    Returns ``(ok, first_violation)`` where the violation is ``(station,
    timestep)`` with a 1-based timestep, scanning timestep-major.
    """
    res = flow_residual(plan, fleet, net)
    bad = np.abs(res) > tol
    if not bad.any():
        return True, None
    t_idx, i_idx = np.nonzero(bad.T)
    return False, (int(i_idx[0]), int(t_idx[0]) + 1)


def check_waiter_conservation(plan: Plan, outstanding: OutstandingDemand,
                              tol: float = 1e-9) -> bool:
    """Every waiting customer is scheduled exactly once within timesteps 1..T."""
    _check_dims(plan, outstanding.n)
    return bool(np.all(np.abs(plan.w.sum(axis=2) - outstanding.lambda0) <= tol))


def idle_plan(fleet: FleetState) -> Plan:
    """Plan in which every available vehicle idles on its self-loop forever."""
    n, T = fleet.n, fleet.T
    x = np.zeros((n, n, T), dtype=np.int64)
    s = fleet.supply()
    held = np.zeros(n, dtype=np.int64)
    for t in range(T):
        held = held + s[:, t]
        x[np.arange(n), np.arange(n), t] = held
    return Plan(x, np.zeros_like(x))


def vehicles_in_system(plan: Plan, fleet: FleetState, net: RoadNetwork, t: int) -> int:
    """Vehicles departing at timestep t plus those in flight or pending later.

    For a conserving plan this equals the number of vehicles that ever enter
    the horizon up to t, i.e. ``sum(a) + sum(v[:, :t])``; vehicles listed in
    ``v`` after t are counted as pending.
    """
    T = plan.T
    dep = int(plan.x[:, :, t - 1].sum())
    in_flight = 0
    for tt in range(1, t):
        for i in range(plan.n):
            for j in range(plan.n):
                if tt + net.tau[i, j] > t:
                    in_flight += int(plan.x[i, j, tt - 1])
    pending = int(fleet.v[:, t:].sum()) if t < T else 0
    return dep + in_flight + pending
