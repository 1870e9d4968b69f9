"""Exact-vertex linear programming and a small branch-and-bound MILP solver.

The LP solver is a two-phase revised simplex on a dense explicit basis
inverse.  It always returns a basic feasible solution, which is what the
integrality argument for network-flow programs needs: interior-point
solvers land on face centres.

Pricing is Dantzig's rule; after a run of degenerate pivots the solver
switches to Bland's smallest-index rule until the objective moves again,
which rules out cycling.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Hashable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import blas

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9
INT_TOL = 1e-6
_PIVOT_TOL = 1e-9
_OPT_TOL = 1e-9
_REFACTOR_EVERY = 100
_DEGENERATE_STALL = 30

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


class LPError(RuntimeError):
    pass


class NodeBudgetExceeded(LPError):
    """Branch-and-bound hit its node budget before proving optimality."""

    def __init__(self, budget: int, incumbent: Optional[float], bound: float):
        super().__init__(f"node budget {budget} exhausted (incumbent={incumbent}, bound={bound})")
        self.budget = budget
        self.incumbent = incumbent
        self.bound = bound


class IntegralityError(LPError):
    """A value that should be integral (TUM program) is fractional."""

    def __init__(self, index: int, tag, value: float):
        super().__init__(f"variable {index} ({tag}) has fractional value {value!r}")
        self.index = index
        self.tag = tag
        self.value = value


@dataclass(frozen=True)
class LinearProgram:
    """min c.x  s.t.  A_eq x = b_eq,  A_ge x >= b_ge,  lower <= x <= upper.

    ``names`` carries one hashable tag per variable, e.g. ``("x", i, j, t)``.
    ``integer`` marks variables the MILP path must make integral.
    """

    objective: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_ge: sp.csr_matrix
    b_ge: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    integer: np.ndarray
    names: Tuple[Hashable, ...]
    eq_names: Tuple[Hashable, ...] = ()
    ge_names: Tuple[Hashable, ...] = ()

    @property
    def num_vars(self) -> int:
        return self.objective.shape[0]

    @property
    def eq_rows(self) -> List[Tuple[Dict[int, float], float]]:
        return _rows(self.A_eq, self.b_eq)

    @property
    def ge_rows(self) -> List[Tuple[Dict[int, float], float]]:
        return _rows(self.A_ge, self.b_ge)

    def index(self) -> Dict[Hashable, int]:
        return {name: k for k, name in enumerate(self.names)}

    def with_bounds(self, lower: np.ndarray, upper: np.ndarray) -> "LinearProgram":
        return replace(self, lower=lower, upper=upper)

    def relaxed(self) -> "LinearProgram":
        return replace(self, integer=np.zeros(self.num_vars, dtype=bool))

    def as_integer(self) -> "LinearProgram":
        """Same program with every variable marked integer."""
        return replace(self, integer=np.ones(self.num_vars, dtype=bool))

    def evaluate(self, x: np.ndarray) -> float:
        return float(self.objective @ x)

    def max_violation(self, x: np.ndarray) -> float:
        viol = [0.0]
        if self.A_eq.shape[0]:
            viol.append(float(np.abs(self.A_eq @ x - self.b_eq).max()))
        if self.A_ge.shape[0]:
            viol.append(float(np.max(self.b_ge - self.A_ge @ x, initial=0.0)))
        viol.append(float(np.max(self.lower - x, initial=0.0)))
        viol.append(float(np.max(x - self.upper, initial=0.0)))
        return max(viol)


def _rows(A: sp.csr_matrix, b: np.ndarray) -> List[Tuple[Dict[int, float], float]]:
    out = []
    for r in range(A.shape[0]):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        out.append(({int(c): float(v) for c, v in zip(A.indices[lo:hi], A.data[lo:hi])},
                    float(b[r])))
    return out


class LPBuilder:
    """Incremental construction of a :class:`LinearProgram`."""

    def __init__(self):
        self._names: List[Hashable] = []
        self._index: Dict[Hashable, int] = {}
        self._cost: List[float] = []
        self._lower: List[float] = []
        self._upper: List[float] = []
        self._integer: List[bool] = []
        self._eq: Tuple[list, list, list, list, list] = ([], [], [], [], [])
        self._ge: Tuple[list, list, list, list, list] = ([], [], [], [], [])

    def add_var(self, name: Hashable, cost: float = 0.0, lower: float = 0.0,
                upper: float = math.inf, integer: bool = False) -> int:
        if name in self._index:
            raise ValueError(f"duplicate variable {name!r}")
        k = len(self._names)
        self._names.append(name)
        self._index[name] = k
        self._cost.append(float(cost))
        self._lower.append(float(lower))
        self._upper.append(float(upper))
        self._integer.append(bool(integer))
        return k

    def var(self, name: Hashable) -> int:
        return self._index[name]

    def has_var(self, name: Hashable) -> bool:
        return name in self._index

    def add_cost(self, k: int, cost: float) -> None:
        self._cost[k] += float(cost)

    @staticmethod
    def _add_row(store, coefs: Dict[int, float], rhs: float, name) -> None:
        rows, cols, vals, rhss, names = store
        r = len(rhss)
        if not math.isfinite(rhs):
            raise ValueError(f"row {name!r} has non-finite rhs {rhs}")
        for c, v in coefs.items():
            if v != 0.0:
                rows.append(r)
                cols.append(c)
                vals.append(float(v))
        rhss.append(float(rhs))
        names.append(name if name is not None else r)

    def add_eq(self, coefs: Dict[int, float], rhs: float, name: Hashable = None) -> None:
        self._add_row(self._eq, coefs, rhs, name)

    def add_ge(self, coefs: Dict[int, float], rhs: float, name: Hashable = None) -> None:
        self._add_row(self._ge, coefs, rhs, name)

    def add_le(self, coefs: Dict[int, float], rhs: float, name: Hashable = None) -> None:
        self._add_row(self._ge, {c: -v for c, v in coefs.items()}, -rhs, name)

    def build(self) -> LinearProgram:
        nv = len(self._names)

        def mat(store):
            rows, cols, vals, rhss, names = store
            A = sp.csr_matrix((vals, (rows, cols)), shape=(len(rhss), nv))
            A.sum_duplicates()
            return A, np.array(rhss, dtype=float), tuple(names)

        A_eq, b_eq, eq_names = mat(self._eq)
        A_ge, b_ge, ge_names = mat(self._ge)
        return LinearProgram(
            objective=np.array(self._cost, dtype=float),
            A_eq=A_eq, b_eq=b_eq, A_ge=A_ge, b_ge=b_ge,
            lower=np.array(self._lower, dtype=float),
            upper=np.array(self._upper, dtype=float),
            integer=np.array(self._integer, dtype=bool),
            names=tuple(self._names), eq_names=eq_names, ge_names=ge_names,
        )


@dataclass
class Solution:
    status: str
    values: Optional[np.ndarray] = None
    objective_value: Optional[float] = None
    basis: Tuple[Hashable, ...] = ()
    iterations: int = 0
    nodes: int = 0
    names: Tuple[Hashable, ...] = field(default=(), repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def value_of(self, name: Hashable) -> float:
        return float(self.values[self.names.index(name)])


class _Simplex:
    """Revised simplex on ``A y = b, y >= 0`` with ``b >= 0``."""

    def __init__(self, A: sp.csc_matrix, b: np.ndarray, basis: np.ndarray, n_real: int):
        self.A = A
        self.AT = A.T.tocsr()
        self.b = b
        self.m, self.ncols = A.shape
        self.basis = basis.copy()
        self.n_real = n_real
        self.is_basic = np.zeros(self.ncols, dtype=bool)
        self.is_basic[self.basis] = True
        self.iterations = 0
        self._refactor()

    def _column(self, q: int) -> np.ndarray:
        lo, hi = self.A.indptr[q], self.A.indptr[q + 1]
        return self.Binv[:, self.A.indices[lo:hi]] @ self.A.data[lo:hi]

    def _refactor(self) -> None:
        if self.m == 0:
            self.Binv = np.zeros((0, 0), order="F")
            self.xB = np.zeros(0)
            return
        B = self.A[:, self.basis].toarray()
        self.Binv = np.asfortranarray(np.linalg.inv(B))
        self.xB = self.Binv @ self.b
        self.xB[np.abs(self.xB) < 1e-12] = 0.0
        self._since_refactor = 0

    def run(self, cost: np.ndarray, allowed: np.ndarray, max_iter: int) -> str:
        """Minimise ``cost`` over the current feasible basis; returns a status."""
        m = self.m
        y = cost[self.basis] @ self.Binv if m else np.zeros(0)
        degenerate_run = 0
        bland = False
        while True:
            if self.iterations >= max_iter:
                raise LPError(f"simplex iteration limit {max_iter} reached")
            d = cost - self.AT @ y if m else cost.copy()
            cand = allowed & ~self.is_basic & (d < -_OPT_TOL)
            if not cand.any():
                return OPTIMAL
            if bland:
                q = int(np.flatnonzero(cand)[0])
            else:
                dq = np.where(cand, d, 0.0)
                q = int(np.argmin(dq))
            alpha = self._column(q)
            pos = alpha > _PIVOT_TOL
            if not pos.any():
                return UNBOUNDED
            ratios = np.full(m, np.inf)
            ratios[pos] = self.xB[pos] / alpha[pos]
            theta = ratios.min()
            ties = np.flatnonzero(ratios <= theta + 1e-12)
            if bland:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(alpha[ties])])
            theta = max(ratios[r], 0.0)
            self._pivot(r, q, alpha, theta)
            # incremental dual update: y' = y + d_q * (row r of new Binv)
            y = y + d[q] * self.Binv[r, :]
            if theta <= 1e-12:
                degenerate_run += 1
                if degenerate_run >= _DEGENERATE_STALL:
                    bland = True
            else:
                degenerate_run = 0
                bland = False
            if self._since_refactor >= _REFACTOR_EVERY:
                self._refactor()
                y = cost[self.basis] @ self.Binv

    def _pivot(self, r: int, q: int, alpha: np.ndarray, theta: float) -> None:
        leaving = self.basis[r]
        self.xB -= theta * alpha
        self.xB[r] = theta
        self.xB[np.abs(self.xB) < 1e-12] = 0.0
        np.maximum(self.xB, 0.0, out=self.xB)
        piv = alpha[r]
        row = self.Binv[r, :] / piv
        a = alpha.copy()
        a[r] = 0.0
        self.Binv = blas.dger(-1.0, a, row, a=self.Binv, overwrite_a=True)
        self.Binv[r, :] = row
        self.is_basic[leaving] = False
        self.is_basic[q] = True
        self.basis[r] = q
        self.iterations += 1
        self._since_refactor += 1


def _standard_form(lp: LinearProgram):
    """Shift to y = x - lower >= 0, add surplus columns, make rhs >= 0."""
    nv = lp.num_vars
    if np.any(~np.isfinite(lp.lower)):
        raise ValueError("all variables need finite lower bounds")
    A_ge, b_ge = lp.A_ge, lp.b_ge
    finite_ub = np.flatnonzero(np.isfinite(lp.upper))
    if finite_ub.size:
        U = sp.csr_matrix((-np.ones(finite_ub.size), (np.arange(finite_ub.size), finite_ub)),
                          shape=(finite_ub.size, nv))
        A_ge = sp.vstack([A_ge, U], format="csr")
        b_ge = np.concatenate([b_ge, -lp.upper[finite_ub]])
    n_eq, n_ge = lp.A_eq.shape[0], A_ge.shape[0]
    b_eq = lp.b_eq - lp.A_eq @ lp.lower
    b_ge = b_ge - A_ge @ lp.lower
    surplus = sp.vstack([sp.csr_matrix((n_eq, n_ge)), -sp.identity(n_ge, format="csr")])
    A = sp.hstack([sp.vstack([lp.A_eq, A_ge]), surplus], format="csr")
    b = np.concatenate([b_eq, b_ge])
    # flip rows with negative rhs; flip zero-rhs >= rows so the surplus has +1
    flip = b < 0
    flip[n_eq:] |= b[n_eq:] == 0
    sign = np.where(flip, -1.0, 1.0)
    A = sp.diags(sign) @ A
    b = b * sign
    b[np.abs(b) < 1e-15] = 0.0
    return A.tocsc(), b, n_eq, n_ge


def _crash_basis(A: sp.csc_matrix, n_eq: int, n_struct: int) -> np.ndarray:
    """Pick a starting column per row: surplus, positive singleton, or -1 (artificial)."""
    m = A.shape[0]
    basis = np.full(m, -1, dtype=np.int64)
    n_ge = m - n_eq
    for k in range(n_ge):
        col = n_struct + k
        r = n_eq + k
        lo, hi = A.indptr[col], A.indptr[col + 1]
        if hi > lo and A.data[lo] > 0:
            basis[r] = col
    counts = np.diff(A.indptr[: n_struct + 1])
    for col in np.flatnonzero(counts == 1):
        lo = A.indptr[col]
        r = A.indices[lo]
        if basis[r] < 0 and A.data[lo] > 0:
            basis[r] = col
    return basis


ENGINES = ("simplex", "highs")


def solve_lp(lp: LinearProgram, max_iter: int = 200_000, engine: str = "simplex") -> Solution:
    """Solve the LP to a basic (vertex) optimum.

    ``engine="simplex"`` uses the built-in two-phase simplex.  ``"highs"``
    delegates to HiGHS' dual simplex through SciPy, which also ends on a
    basic solution and is much faster on simulator-sized programs.
    """
    if engine == "highs":
        return _solve_highs(lp)
    if engine != "simplex":
        raise ValueError(f"unknown LP engine {engine!r}; expected one of {ENGINES}")
    nv = lp.num_vars
    A, b, n_eq, n_ge = _standard_form(lp)
    m, ncols = A.shape
    basis = _crash_basis(A, n_eq, nv)
    art_rows = np.flatnonzero(basis < 0)
    n_art = art_rows.size
    if n_art:
        art = sp.csc_matrix((np.ones(n_art), (art_rows, np.arange(n_art))), shape=(m, n_art))
        A = sp.hstack([A, art], format="csc")
        basis[art_rows] = ncols + np.arange(n_art)
    total = ncols + n_art
    spx = _Simplex(A, b, basis, ncols)
    if np.any(spx.xB < -FEAS_TOL):
        # crash columns with coefficient > 1 could in principle go negative; never for +1 data
        raise LPError("crash basis infeasible")

    real = np.zeros(total, dtype=bool)
    real[:ncols] = True
    if n_art:
        phase1 = np.zeros(total)
        phase1[ncols:] = 1.0
        spx.run(phase1, np.ones(total, dtype=bool), max_iter)
        spx._refactor()
        infeas = float(spx.xB[spx.basis >= ncols].sum()) if m else 0.0
        if infeas > 1e-7:
            return Solution(INFEASIBLE, iterations=spx.iterations, names=lp.names)
        _drive_out_artificials(spx, ncols)
    cost = np.zeros(total)
    cost[:nv] = lp.objective
    status = spx.run(cost, real, max_iter)
    if status == UNBOUNDED:
        return Solution(UNBOUNDED, iterations=spx.iterations, names=lp.names)
    spx._refactor()
    y = np.zeros(total)
    y[spx.basis] = spx.xB
    if np.any(y[ncols:] > 1e-7):
        raise LPError("artificial variable left positive after phase 2")
    x = y[:nv] + lp.lower
    x[np.abs(x - np.round(x)) < 1e-11] = np.round(x[np.abs(x - np.round(x)) < 1e-11])
    viol = lp.max_violation(x)
    if viol > 1e-7:
        raise LPError(f"simplex returned a point violating constraints by {viol:g}")
    return Solution(OPTIMAL, x, lp.evaluate(x), _active_set(lp, x), spx.iterations,
                    names=lp.names)


def _solve_highs(lp: LinearProgram) -> Solution:
    from scipy.optimize import linprog

    res = linprog(lp.objective,
                  A_ub=-lp.A_ge if lp.A_ge.shape[0] else None,
                  b_ub=-lp.b_ge if lp.A_ge.shape[0] else None,
                  A_eq=lp.A_eq if lp.A_eq.shape[0] else None,
                  b_eq=lp.b_eq if lp.A_eq.shape[0] else None,
                  bounds=np.column_stack([lp.lower, lp.upper]), method="highs-ds")
    if res.status == 2:
        return Solution(INFEASIBLE, iterations=int(res.nit), names=lp.names)
    if res.status == 3:
        return Solution(UNBOUNDED, iterations=int(res.nit), names=lp.names)
    if res.status != 0:
        raise LPError(f"HiGHS failed: {res.message}")
    x = np.asarray(res.x, dtype=float)
    near = np.abs(x - np.round(x)) < 1e-9
    x[near] = np.round(x[near])
    viol = lp.max_violation(x)
    if viol > 1e-7:
        raise LPError(f"HiGHS returned a point violating constraints by {viol:g}")
    return Solution(OPTIMAL, x, lp.evaluate(x), _active_set(lp, x), int(res.nit),
                    names=lp.names)


def _drive_out_artificials(spx: _Simplex, ncols: int) -> None:
    """Degenerate pivots that replace zero-level artificials by real columns."""
    for r in range(spx.m):
        if spx.basis[r] < ncols:
            continue
        row = np.asarray(spx.A[:, :ncols].T @ spx.Binv[r, :]).ravel()
        row[spx.is_basic[:ncols]] = 0.0
        cand = np.flatnonzero(np.abs(row) > 1e-7)
        if cand.size == 0:
            continue  # redundant row; the artificial stays basic at zero
        q = int(cand[np.argmax(np.abs(row[cand]))])
        spx._pivot(r, q, spx._column(q), 0.0)
    spx._refactor()


def _active_set(lp: LinearProgram, x: np.ndarray) -> Tuple[Hashable, ...]:
    """Equality rows, tight inequality rows and variables sitting on a bound."""
    active: List[Hashable] = [("eq", r) for r in range(lp.A_eq.shape[0])]
    if lp.A_ge.shape[0]:
        slack = lp.A_ge @ x - lp.b_ge
        active += [("ge", int(r)) for r in np.flatnonzero(np.abs(slack) <= 1e-9)]
    active += [("lb", int(k)) for k in np.flatnonzero(np.abs(x - lp.lower) <= 1e-9)]
    active += [("ub", int(k)) for k in np.flatnonzero(np.abs(x - lp.upper) <= 1e-9)]
    return tuple(active)


def active_matrix(lp: LinearProgram, basis: Iterable[Hashable]) -> np.ndarray:
    """Dense matrix of the active constraints listed in a solution's basis."""
    rows = []
    A_eq = lp.A_eq.toarray()
    A_ge = lp.A_ge.toarray()
    eye = np.eye(lp.num_vars)
    for kind, k in basis:
        rows.append({"eq": A_eq, "ge": A_ge, "lb": eye, "ub": eye}[kind][k])
    return np.array(rows).reshape(-1, lp.num_vars)


def certify_integral(sol: Solution, tol: float = INT_TOL,
                     mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Round the solution, or raise :class:`IntegralityError` on a real fraction."""
    if not sol.optimal:
        raise LPError(f"cannot certify a {sol.status} solution")
    vals = sol.values
    dist = np.abs(vals - np.round(vals))
    if mask is not None:
        dist = np.where(mask, dist, 0.0)
    worst = int(np.argmax(dist)) if dist.size else 0
    if dist.size and dist[worst] > tol:
        tag = sol.names[worst] if sol.names else worst
        raise IntegralityError(worst, tag, float(vals[worst]))
    return np.round(vals).astype(np.int64)


def solve_milp(lp: LinearProgram, node_budget: int = 100_000,
               int_tol: float = INT_TOL, engine: str = "simplex") -> Solution:
    """Best-first branch-and-bound on the LP bound, most-fractional branching."""
    mask = lp.integer
    if not mask.any():
        raise ValueError("solve_milp needs at least one integer variable")
    relax = lp.relaxed()
    counter = itertools.count()
    root = solve_lp(relax, engine=engine)
    nodes = 1
    if not root.optimal:
        return Solution(root.status, iterations=root.iterations, nodes=nodes, names=lp.names)
    heap = [(root.objective_value, next(counter), lp.lower, lp.upper, root)]
    best: Optional[Solution] = None
    best_obj = math.inf
    iterations = root.iterations
    while heap:
        bound, _, lower, upper, sol = heapq.heappop(heap)
        if bound >= best_obj - 1e-9:
            continue
        frac = np.abs(sol.values - np.round(sol.values))
        frac = np.where(mask, frac, 0.0)
        k = int(np.argmax(frac))
        if frac[k] <= int_tol:
            vals = sol.values.copy()
            vals[mask] = np.round(vals[mask])
            obj = lp.evaluate(vals)
            if obj < best_obj:
                best_obj = obj
                best = Solution(OPTIMAL, vals, obj, sol.basis, names=lp.names)
            continue
        v = sol.values[k]
        for lo_k, hi_k in ((lower[k], math.floor(v)), (math.ceil(v), upper[k])):
            if lo_k > hi_k:
                continue
            if nodes >= node_budget:
                raise NodeBudgetExceeded(node_budget, best_obj if best else None, bound)
            lo = lower.copy()
            hi = upper.copy()
            lo[k], hi[k] = lo_k, hi_k
            child = solve_lp(relax.with_bounds(lo, hi), engine=engine)
            nodes += 1
            iterations += child.iterations
            if child.status == UNBOUNDED:
                return Solution(UNBOUNDED, nodes=nodes, names=lp.names)
            if child.optimal and child.objective_value < best_obj - 1e-9:
                heapq.heappush(heap, (child.objective_value, next(counter), lo, hi, child))
    if best is None:
        return Solution(INFEASIBLE, iterations=iterations, nodes=nodes, names=lp.names)
    best.iterations = iterations
    best.nodes = nodes
    return best


def dump_lp(lp: LinearProgram) -> str:
    """Plain-text listing: objective, one constraint per line, then bounds.

    Format::

        min: <coef> <name> + ...
        eq <rowname>: <coef> <name> + ... = <rhs>
        ge <rowname>: <coef> <name> + ... >= <rhs>
        bound <name>: <lower> <= . <= <upper> [int]
    """

    def term_list(pairs):
        parts = [f"{coef:+g} {lp.names[c]}" for c, coef in pairs]
        return " ".join(parts) if parts else "0"

    lines = ["min: " + term_list((k, c) for k, c in enumerate(lp.objective) if c != 0.0)]
    for tag, rows, names, op in (("eq", lp.eq_rows, lp.eq_names, "="),
                                 ("ge", lp.ge_rows, lp.ge_names, ">=")):
        for (coefs, rhs), nm in zip(rows, names):
            lines.append(f"{tag} {nm}: {term_list(sorted(coefs.items()))} {op} {rhs:g}")
    for k, name in enumerate(lp.names):
        flag = " int" if lp.integer[k] else ""
        lines.append(f"bound {name}: {lp.lower[k]:g} <= . <= {lp.upper[k]:g}{flag}")
    return "\n".join(lines) + "\n"
