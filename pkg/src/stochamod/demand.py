"""Demand traces, binning, and conditional generative demand models.

Every model implements ``sample(history, T, K, seed) -> list[DemandSample]``
and ``mean(history, T)``.  ``history`` carries the clock at the start of the
planning window together with the recently realised binned demand; models
that know the time of day align their output to ``history.step``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Protocol, Sequence, Union

import numpy as np

from .netflow import DemandSample, ShapeError

Seed = Union[int, Sequence[int], None]


class TraceError(ValueError):
    """Malformed or out-of-order demand trace."""


@dataclass(frozen=True)
class DemandTrace:
    """Trip requests ``(t, origin, dest)`` with ``t`` in seconds from scenario start."""

    t: np.ndarray
    origin: np.ndarray
    dest: np.ndarray
    n: int
    duration_s: Optional[int] = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.int64).reshape(-1)
        o = np.asarray(self.origin, dtype=np.int64).reshape(-1)
        d = np.asarray(self.dest, dtype=np.int64).reshape(-1)
        if not (t.shape == o.shape == d.shape):
            raise ShapeError("trace columns have different lengths")
        if self.n < 1:
            raise ValueError("station count must be positive")
        if t.size:
            if t.min() < 0:
                raise TraceError("negative request time")
            bad = np.flatnonzero(np.diff(t) < 0)
            if bad.size:
                raise TraceError(f"request times decrease at record {int(bad[0]) + 1}")
            for col, name in ((o, "origin"), (d, "dest")):
                if col.min() < 0 or col.max() >= self.n:
                    raise TraceError(f"{name} outside 0..{self.n - 1}")
        for arr in (t, o, d):
            arr.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "dest", d)

    def __len__(self) -> int:
        return int(self.t.size)

    @property
    def end_s(self) -> int:
        """Duration if declared, else one second past the last request."""
        if self.duration_s is not None:
            return int(self.duration_s)
        return int(self.t[-1]) + 1 if len(self) else 0

    def binned(self, start_s: int, dt_s: int, T: int) -> np.ndarray:
        """Counts per (origin, dest, step); request ``t`` lands in step ``floor((t-start)/dt)+1``."""
        out = np.zeros((self.n, self.n, T), dtype=np.int64)
        if T <= 0:
            return out
        keep = (self.t >= start_s) & (self.t < start_s + T * dt_s)
        step = (self.t[keep] - start_s) // dt_s
        np.add.at(out, (self.origin[keep], self.dest[keep], step), 1)
        return out

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "origin", "dest"])
            wr.writerows(zip(self.t.tolist(), self.origin.tolist(), self.dest.tolist()))

    @classmethod
    def read_csv(cls, path: Union[str, Path], n: int,
                 duration_s: Optional[int] = None) -> "DemandTrace":
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd, None)
            if header is None or [h.strip() for h in header] != ["t", "origin", "dest"]:
                raise TraceError(f"{path}: expected header 't,origin,dest', got {header}")
            rows = []
            for lineno, row in enumerate(rd, start=2):
                if not row:
                    continue
                try:
                    rows.append(tuple(int(v) for v in row))
                except ValueError as exc:
                    raise TraceError(f"{path}:{lineno}: {exc}") from None
                if len(rows[-1]) != 3:
                    raise TraceError(f"{path}:{lineno}: expected 3 fields")
        arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], n, duration_s)


@dataclass(frozen=True)
class DemandHistory:
    """Conditioning information ``rho`` handed to a model at a planning epoch.

    ``recent[:, :, -1]`` is the step that ended at ``clock_s``.
    """

    clock_s: int
    dt_s: int
    recent: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0), dtype=np.int64))

    @property
    def step(self) -> int:
        """Index of the first planning step counted from time zero."""
        return self.clock_s // self.dt_s

    @classmethod
    def at(cls, clock_s: int, dt_s: int) -> "DemandHistory":
        return cls(clock_s, dt_s)


class GenerativeModel(Protocol):
    def sample(self, history: DemandHistory, T: int, K: int, seed: Seed = None) -> List[DemandSample]:
        ...

    def mean(self, history: DemandHistory, T: int) -> np.ndarray:
        ...


def _window(tensor: np.ndarray, start: int, T: int) -> np.ndarray:
    """Slice ``[start, start+T)`` along the last axis, zero-padding past the end."""
    n = tensor.shape[0]
    out = np.zeros((n, n, T), dtype=tensor.dtype)
    hi = min(start + T, tensor.shape[2])
    if hi > start:
        out[:, :, : hi - start] = tensor[:, :, start:hi]
    return out


class PoissonModel:
    """Independent Poisson counts per cell.

    With ``aligned`` the mean tensor is indexed by absolute step, so each
    epoch reads its own window; otherwise the first ``T`` slices are used
    every time (a stationary model).
    """

    def __init__(self, mean: np.ndarray, aligned: bool = False):
        mean = np.asarray(mean, dtype=float)
        if mean.ndim != 3 or mean.shape[0] != mean.shape[1]:
            raise ShapeError(f"mean must be n x n x L, got {mean.shape}")
        if not np.all(np.isfinite(mean)):
            raise ValueError("Poisson means must be finite")
        if mean.min(initial=0.0) < 0:
            raise ValueError("Poisson means must be non-negative")
        mean.setflags(write=False)
        self._mean = mean
        self.aligned = aligned

    def mean(self, history: DemandHistory, T: int) -> np.ndarray:
        start = history.step if self.aligned else 0
        if not self.aligned and T > self._mean.shape[2]:
            raise IndexError(f"model covers {self._mean.shape[2]} steps, asked for {T}")
        return _window(self._mean, start, T)

    def sample(self, history: DemandHistory, T: int, K: int, seed: Seed = None) -> List[DemandSample]:
        lam = self.mean(history, T)
        rng = np.random.default_rng(seed)
        draws = rng.poisson(lam, size=(K,) + lam.shape)
        return [DemandSample(d) for d in draws]


def poisson_model(mean: np.ndarray, aligned: bool = False) -> PoissonModel:
    return PoissonModel(mean, aligned)


class BootstrapModel:
    """Resample whole historical days; each sample is one day's binned window."""

    def __init__(self, days: Sequence[np.ndarray]):
        if len(days) == 0:
            raise ValueError("bootstrap model needs at least one historical day")
        length = max(d.shape[2] for d in days)
        self._days = np.stack([_window(np.asarray(d, dtype=np.int64), 0, length) for d in days])
        self._days.setflags(write=False)

    @property
    def num_days(self) -> int:
        return self._days.shape[0]

    def mean(self, history: DemandHistory, T: int) -> np.ndarray:
        return np.stack([_window(d, history.step, T) for d in self._days]).mean(axis=0)

    def sample(self, history: DemandHistory, T: int, K: int, seed: Seed = None) -> List[DemandSample]:
        rng = np.random.default_rng(seed)
        pick = rng.integers(0, self.num_days, size=K)
        return [DemandSample(_window(self._days[d], history.step, T)) for d in pick]

    def day_choices(self, K: int, seed: Seed = None) -> np.ndarray:
        """The day indices :meth:`sample` would draw for the same seed."""
        return np.random.default_rng(seed).integers(0, self.num_days, size=K)


def bootstrap_model(historical: Sequence[DemandTrace], dt_s: int,
                    steps: Optional[int] = None) -> BootstrapModel:
    """Bin each historical day at ``dt_s`` over ``steps`` steps (default: whole day)."""
    if len(historical) == 0:
        raise ValueError("bootstrap model needs at least one historical day")
    if steps is None:
        steps = max(math.ceil(tr.end_s / dt_s) for tr in historical)
    return BootstrapModel([tr.binned(0, dt_s, steps) for tr in historical])


class PerfectModel:
    """K copies of the realised demand."""

    def __init__(self, trace: DemandTrace, strict: bool = True):
        self.trace = trace
        self.strict = strict

    def mean(self, history: DemandHistory, T: int) -> np.ndarray:
        if self.strict and history.clock_s + T * history.dt_s > self.trace.end_s:
            raise IndexError(f"horizon ends at {history.clock_s + T * history.dt_s} s, "
                             f"trace at {self.trace.end_s} s")
        return self.trace.binned(history.clock_s, history.dt_s, T).astype(float)

    def sample(self, history: DemandHistory, T: int, K: int, seed: Seed = None) -> List[DemandSample]:
        truth = DemandSample(self.mean(history, T).astype(np.int64))
        return [truth] * K


def perfect_model(future: DemandTrace, strict: bool = True) -> PerfectModel:
    return PerfectModel(future, strict)


class PointForecastModel:
    """Deterministic forecast: the base model's mean, rounded to the nearest integer."""

    def __init__(self, base: GenerativeModel):
        self.base = base

    def mean(self, history: DemandHistory, T: int) -> np.ndarray:
        return self.base.mean(history, T)

    def sample(self, history: DemandHistory, T: int, K: int, seed: Seed = None) -> List[DemandSample]:
        point = DemandSample(np.rint(self.base.mean(history, T)).astype(np.int64))
        return [point] * K


def point_model(base: GenerativeModel) -> PointForecastModel:
    return PointForecastModel(base)


class SampleFileModel:
    """Replays K externally produced samples from a ``k,i,j,t,count`` CSV (``t`` 1-based)."""

    def __init__(self, path: Union[str, Path], n: int):
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd, None)
            if header is None or [h.strip() for h in header] != ["k", "i", "j", "t", "count"]:
                raise TraceError(f"{path}: expected header 'k,i,j,t,count', got {header}")
            rows = np.array([[int(v) for v in r] for r in rd if r], dtype=np.int64).reshape(-1, 5)
        if rows.size and (rows.min(axis=0)[[0, 1, 2]].min() < 0 or rows[:, 3].min() < 1
                          or rows[:, 4].min() < 0 or max(rows[:, 1].max(), rows[:, 2].max()) >= n):
            raise TraceError(f"{path}: index or count out of range")
        K = int(rows[:, 0].max()) + 1 if rows.size else 0
        T = int(rows[:, 3].max()) if rows.size else 0
        lam = np.zeros((K, n, n, T), dtype=np.int64)
        np.add.at(lam, (rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3] - 1), rows[:, 4])
        self._lam = lam

    @property
    def K(self) -> int:
        return self._lam.shape[0]

    def mean(self, history: DemandHistory, T: int) -> np.ndarray:
        return np.stack([s.lam for s in self.sample(history, T, self.K)]).mean(axis=0)

    def sample(self, history: DemandHistory, T: int, K: int, seed: Seed = None) -> List[DemandSample]:
        if K > self.K:
            raise ValueError(f"sample file holds {self.K} samples, {K} requested")
        if T > self._lam.shape[3]:
            raise IndexError(f"sample file covers {self._lam.shape[3]} steps, {T} requested")
        return [DemandSample(self._lam[k, :, :, :T]) for k in range(K)]


def sample_file_model(path: Union[str, Path], n: int) -> SampleFileModel:
    return SampleFileModel(path, n)


def write_sample_file(samples: Sequence[DemandSample], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["k", "i", "j", "t", "count"])
        for k, s in enumerate(samples):
            for i, j, t in zip(*np.nonzero(s.lam)):
                wr.writerow([k, int(i), int(j), int(t) + 1, int(s.lam[i, j, t])])


def estimate_subexponential(samples: Sequence[float]) -> tuple:
    """Moment-based (sigma2, b): sample variance and ``max(1, max|x - mean| / log count)``.

    A heuristic; there is no canonical estimator of sub-exponential parameters.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size < 30:
        raise ValueError(f"need at least 30 samples, got {x.size}")
    dev = np.abs(x - x.mean())
    if dev.max() == 0.0:
        return 0.0, 1.0
    return float(x.var(ddof=1)), max(1.0, float(dev.max()) / math.log(x.size))


PROFILES = ("constant", "mixture")


def generate_trace(n: int, duration_s: int, rate: float, profile: str = "constant",
                   seed: Seed = 0, block_s: int = 900, surge: float = 2.5,
                   calm: float = 0.25, hotspots: Optional[Sequence[int]] = None,
                   hotspot_share: float = 0.8) -> DemandTrace:
    """Synthetic trip requests from a piecewise-constant Poisson process.

    ``rate`` is total requests per second.  ``constant`` keeps it fixed with
    uniform origins.  ``mixture`` switches every ``block_s`` seconds, with
    probability 1/2 each, between a calm regime (``calm * rate``, uniform
    origins) and a surge regime (``surge * rate``) where a share of trips
    leaves from the hotspot stations.  Destinations are uniform over the
    other stations (or the origin itself when ``n == 1``).
    """
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    if rate < 0:
        raise ValueError("rate must be non-negative")
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; expected one of {PROFILES}")
    rng = np.random.default_rng(seed)
    hot = np.asarray(list(hotspots) if hotspots is not None else range(max(1, n // 5)),
                     dtype=np.int64)
    times, origins = [], []
    for start in range(0, duration_s, block_s if profile == "mixture" else duration_s):
        length = min(block_s if profile == "mixture" else duration_s, duration_s - start)
        if profile == "constant":
            r, share = rate, 0.0
        elif rng.random() < 0.5:
            r, share = rate * calm, 0.0
        else:
            r, share = rate * surge, hotspot_share
        count = rng.poisson(r * length)
        t = np.sort(rng.uniform(start, start + length, size=count))
        o = rng.integers(0, n, size=count)
        from_hot = rng.random(count) < share
        o[from_hot] = hot[rng.integers(0, hot.size, size=int(from_hot.sum()))]
        times.append(np.floor(t).astype(np.int64))
        origins.append(o)
    t = np.concatenate(times)
    o = np.concatenate(origins)
    if n > 1:
        d = (o + rng.integers(1, n, size=o.size)) % n
    else:
        d = o.copy()
    return DemandTrace(t, o, d, n, duration_s)
