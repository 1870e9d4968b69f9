"""Tick-based fleet simulator.

One call to :meth:`Simulator.step` covers the interval ``[clock, clock + tick)``:

1. in-flight vehicles whose arrival time is ``<= clock`` become idle;
2. waiting customers are served first-come first-served by idle vehicles at
   their station, with wait ``clock - request``;
3. at an epoch boundary the controller is invoked (see :meth:`run_epoch_controller`);
4. requests in the interval are ingested in trace order; one that finds an
   idle vehicle at its origin is assigned at its request time with zero wait,
   otherwise it joins the station queue;
5. idle vehicles pick up pending rebalancing tasks.

A trip from ``i`` to ``j`` takes ``tau[i, j] * dt_s`` seconds.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, Optional, Protocol, Tuple

import numpy as np

from ..demand import DemandHistory, DemandTrace, TraceError
from ..netflow import FleetState, OutstandingDemand, RoadNetwork

CUSTOMER = "customer"
REBALANCE = "rebalance"


class SimulationError(RuntimeError):
    """An invariant of the simulator broke."""


class EpochError(RuntimeError):
    """The controller failed at a planning epoch; the run is halted."""

    def __init__(self, epoch: int, clock_s: int, controller: str, cause: BaseException):
        super().__init__(f"controller {controller!r} failed at epoch {epoch} "
                         f"(t={clock_s} s): {type(cause).__name__}: {cause}")
        self.epoch = epoch
        self.clock_s = clock_s
        self.controller = controller
        self.cause = cause


@dataclass(frozen=True)
class Snapshot:
    """What a controller sees at an epoch boundary."""

    fleet: FleetState
    outstanding: OutstandingDemand
    history: DemandHistory
    epoch: int
    clock_s: int


@dataclass(frozen=True)
class Decision:
    """Rebalancing tasks ``rebalance[i, j]`` (empty trips i -> j) for the coming epoch.

    ``dispatch`` is the part of ``rebalance`` that sends vehicles towards
    waiting customers; it is informational.
    """

    rebalance: np.ndarray
    dispatch: Optional[np.ndarray] = None


class Controller(Protocol):
    name: str

    def act(self, snap: Snapshot) -> Decision:
        ...


@dataclass(order=True)
class Trip:
    arrival_s: int
    seq: int
    vehicle: int = field(compare=False)
    origin: int = field(compare=False)
    dest: int = field(compare=False)
    kind: str = field(compare=False)


@dataclass
class Customer:
    request_s: int
    dest: int
    ident: int


@dataclass
class ServiceRecord:
    ident: int
    origin: int
    dest: int
    request_s: int
    assign_s: int

    @property
    def wait_s(self) -> int:
        return self.assign_s - self.request_s


@dataclass
class EpochRecord:
    epoch: int
    clock_s: int
    waiting_customers: int
    reb_tasks_issued: int


class Simulator:
    def __init__(self, net: RoadNetwork, initial_vehicles, trace: DemandTrace,
                 horizon_T: int, tick_s: int = 6, controller_period_s: int = 300,
                 lookback_s: int = 4 * 3600):
        if controller_period_s % tick_s:
            raise ValueError("controller period must be a multiple of the tick")
        if trace.n != net.n:
            raise ValueError("trace and network disagree on the station count")
        self.net = net
        self.trace = trace
        self.T = horizon_T
        self.tick_s = tick_s
        self.period_s = controller_period_s
        self.lookback_steps = lookback_s // net.dt_s
        self.clock_s = 0
        self.epoch = 0
        n = net.n
        counts = [int(c) for c in initial_vehicles]
        self.m = sum(counts)
        self.idle: List[Deque[int]] = []
        vid = 0
        for c in counts:
            self.idle.append(deque(range(vid, vid + c)))
            vid += c
        self.in_flight: List[Trip] = []
        self.queues: List[Deque[Customer]] = [deque() for _ in range(n)]
        self.pending: List[Deque[int]] = [deque() for _ in range(n)]
        self.cursor = 0
        self._seq = 0
        self.served: List[ServiceRecord] = []
        self.epochs: List[EpochRecord] = []
        self.reb_executed = 0
        self.reb_issued = 0
        self.fleet_count_min = self.m
        self.fleet_count_max = self.m
        self.ticks = 0

    # -- bookkeeping -------------------------------------------------------
    def _depart(self, vehicle: int, i: int, j: int, when: int, kind: str) -> None:
        dur = int(self.net.tau[i, j]) * self.net.dt_s
        self._seq += 1
        heapq.heappush(self.in_flight, Trip(when + dur, self._seq, vehicle, i, j, kind))

    def _assign(self, i: int, cust: Customer, when: int) -> None:
        vehicle = self.idle[i].popleft()
        self.served.append(ServiceRecord(cust.ident, i, cust.dest, cust.request_s, when))
        self._depart(vehicle, i, cust.dest, when, CUSTOMER)

    def vehicle_count(self) -> int:
        return sum(len(q) for q in self.idle) + len(self.in_flight)

    def waiting(self) -> int:
        return sum(len(q) for q in self.queues)

    @property
    def trace_done(self) -> bool:
        return self.cursor >= len(self.trace)

    # -- phases ------------------------------------------------------------
    def _arrivals_and_queues(self) -> None:
        while self.in_flight and self.in_flight[0].arrival_s <= self.clock_s:
            trip = heapq.heappop(self.in_flight)
            self.idle[trip.dest].append(trip.vehicle)
        for i, q in enumerate(self.queues):
            while q and self.idle[i]:
                self._assign(i, q.popleft(), self.clock_s)

    def _ingest_and_rebalance(self) -> None:
        end = self.clock_s + self.tick_s
        tr = self.trace
        while self.cursor < len(tr) and tr.t[self.cursor] < end:
            t = int(tr.t[self.cursor])
            if t < self.clock_s:
                raise TraceError(f"request {self.cursor} at {t} s arrived after the clock "
                                 f"passed {self.clock_s} s")
            i, j = int(tr.origin[self.cursor]), int(tr.dest[self.cursor])
            cust = Customer(t, j, self.cursor)
            self.cursor += 1
            if self.idle[i] and not self.queues[i]:
                self._assign(i, cust, t)
            else:
                self.queues[i].append(cust)
        for i in range(self.net.n):
            while self.pending[i] and self.idle[i]:
                j = self.pending[i].popleft()
                self._depart(self.idle[i].popleft(), i, j, self.clock_s, REBALANCE)
                self.reb_executed += 1

    def at_epoch(self) -> bool:
        return self.clock_s % self.period_s == 0

    def step(self, controller: Optional[Controller] = None) -> "Simulator":
        self._arrivals_and_queues()
        if controller is not None and self.at_epoch():
            self.run_epoch_controller(controller)
        self._ingest_and_rebalance()
        count = self.vehicle_count()
        if count != self.m:
            raise SimulationError(f"vehicle count {count} != fleet size {self.m} at {self.clock_s} s")
        self.fleet_count_min = min(self.fleet_count_min, count)
        self.fleet_count_max = max(self.fleet_count_max, count)
        self.clock_s += self.tick_s
        self.ticks += 1
        return self

    # -- controller interface ----------------------------------------------
    def snapshot(self) -> Snapshot:
        n, T, dt = self.net.n, self.T, self.net.dt_s
        a = np.array([len(q) for q in self.idle], dtype=np.int64)
        v = np.zeros((n, T), dtype=np.int64)
        for trip in self.in_flight:
            # arriving in (clock + (t-2) dt, clock + (t-1) dt] -> available at step t
            t = math.ceil((trip.arrival_s - self.clock_s) / dt) + 1
            if t <= T:
                v[trip.dest, t - 1] += 1
        lam0 = np.zeros((n, n), dtype=np.int64)
        for i, q in enumerate(self.queues):
            for c in q:
                lam0[i, c.dest] += 1
        L = self.lookback_steps
        recent = self.trace.binned(self.clock_s - L * dt, dt, L)
        # only requests already seen may enter the history
        if self.cursor < len(self.trace):
            unseen = self.trace.t[self.cursor:] < self.clock_s
            if unseen.any():
                raise SimulationError("history would include requests not yet ingested")
        return Snapshot(FleetState(a, v, self.m), OutstandingDemand(lam0),
                        DemandHistory(self.clock_s, dt, recent), self.epoch, self.clock_s)

    def run_epoch_controller(self, controller: Controller) -> None:
        """Discard unused tasks, ask the controller, register its new tasks."""
        for q in self.pending:
            q.clear()
        snap = self.snapshot()
        try:
            decision = controller.act(snap)
            tasks = np.asarray(decision.rebalance, dtype=np.int64)
            if tasks.shape != (self.net.n, self.net.n) or tasks.min(initial=0) < 0:
                raise ValueError(f"bad rebalance matrix of shape {tasks.shape}")
        except Exception as exc:
            raise EpochError(self.epoch, self.clock_s, getattr(controller, "name", "?"), exc) from exc
        issued = 0
        for i in range(self.net.n):
            for j in range(self.net.n):
                if i != j and tasks[i, j] > 0:
                    self.pending[i].extend([j] * int(tasks[i, j]))
                    issued += int(tasks[i, j])
        self.reb_issued += issued
        self.epochs.append(EpochRecord(self.epoch, self.clock_s, self.waiting(), issued))
        self.epoch += 1
