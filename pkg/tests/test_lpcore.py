import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochamod.lpcore import (
    INFEASIBLE,
    UNBOUNDED,
    IntegralityError,
    LPBuilder,
    NodeBudgetExceeded,
    Solution,
    active_matrix,
    certify_integral,
    dump_lp,
    solve_lp,
    solve_milp,
)

from oracles import lp_optimum_by_vertices


def single_var(lower_row=3.0):
    b = LPBuilder()
    x = b.add_var("x", 1.0)
    b.add_ge({x: 1.0}, lower_row)
    return b.build()


def test_single_active_bound():
    sol = solve_lp(single_var())
    assert sol.optimal
    assert sol.values.tolist() == [3.0]
    assert sol.objective_value == 3.0


def test_degenerate_optimum_is_a_vertex():
    b = LPBuilder()
    x = b.add_var("x", 1.0)
    y = b.add_var("y", 1.0)
    b.add_ge({x: 1.0, y: 1.0}, 2.0)
    sol = solve_lp(b.build())
    assert sol.objective_value == pytest.approx(2.0, abs=1e-9)
    assert sorted(sol.values.tolist()) == [0.0, 2.0]


def test_infeasible_and_unbounded():
    b = LPBuilder()
    x = b.add_var("x", 1.0, upper=1.0)
    b.add_ge({x: 1.0}, 2.0)
    assert solve_lp(b.build()).status == INFEASIBLE
    b = LPBuilder()
    x = b.add_var("x", -1.0)
    b.add_ge({x: 1.0}, 0.0)
    assert solve_lp(b.build()).status == UNBOUNDED


def random_lp(rng, nv=5, n_ge=4, n_eq=1):
    b = LPBuilder()
    idx = [b.add_var(k, float(rng.integers(0, 6)), upper=float(rng.integers(2, 7))) for k in range(nv)]
    A_ge = rng.integers(-2, 4, size=(n_ge, nv)).astype(float)
    b_ge = rng.integers(-3, 6, size=n_ge).astype(float)
    A_eq = rng.integers(0, 3, size=(n_eq, nv)).astype(float)
    b_eq = rng.integers(1, 6, size=n_eq).astype(float)
    for r in range(n_ge):
        b.add_ge({k: A_ge[r, k] for k in idx if A_ge[r, k]}, b_ge[r])
    for r in range(n_eq):
        b.add_eq({k: A_eq[r, k] for k in idx if A_eq[r, k]}, b_eq[r])
    lp = b.build()
    return lp, (lp.objective, A_eq, b_eq, A_ge, b_ge, lp.lower, lp.upper)


def test_random_lps_match_vertex_enumeration():
    rng = np.random.default_rng(7)
    compared = 0
    for _ in range(60):
        lp, data = random_lp(rng)
        ref, _ = lp_optimum_by_vertices(*data)
        sol = solve_lp(lp)
        if ref is None:
            assert sol.status == INFEASIBLE
            continue
        compared += 1
        assert sol.optimal
        assert sol.objective_value == pytest.approx(ref, abs=1e-9)
        assert lp.max_violation(sol.values) <= 1e-9
        # a vertex: the active constraints have full column rank
        assert np.linalg.matrix_rank(active_matrix(lp, sol.basis)) == lp.num_vars
    assert compared >= 20


def test_reported_objective_matches_values():
    rng = np.random.default_rng(8)
    for _ in range(30):
        lp, _ = random_lp(rng)
        sol = solve_lp(lp)
        if sol.optimal:
            assert abs(lp.objective @ sol.values - sol.objective_value) <= 1e-9


def test_highs_engine_agrees():
    rng = np.random.default_rng(9)
    for _ in range(30):
        lp, _ = random_lp(rng)
        a, b = solve_lp(lp), solve_lp(lp, engine="highs")
        assert a.status == b.status
        if a.optimal:
            assert a.objective_value == pytest.approx(b.objective_value, abs=1e-7)


def test_unknown_engine():
    with pytest.raises(ValueError):
        solve_lp(single_var(), engine="interior")


def test_milp_rounds_by_branching():
    b = LPBuilder()
    x = b.add_var("x", -1.0, integer=True)
    b.add_le({x: 1.0}, 1.5)
    sol = solve_milp(b.build())
    assert sol.values.tolist() == [1.0]
    assert sol.objective_value == -1.0


def test_milp_on_integral_relaxation_equals_lp():
    lp = single_var()
    mip = lp.as_integer()
    assert solve_milp(mip).objective_value == solve_lp(lp).objective_value


def test_milp_needs_integer_variables():
    with pytest.raises(ValueError):
        solve_milp(single_var())


def knapsack(weights, values, cap):
    b = LPBuilder()
    xs = [b.add_var(k, -v, upper=1.0, integer=True) for k, v in enumerate(values)]
    b.add_le({x: w for x, w in zip(xs, weights)}, cap)
    return b.build()


def test_milp_matches_exhaustive_search_and_bounds_relaxation():
    rng = np.random.default_rng(10)
    for _ in range(25):
        k = 6
        w = rng.integers(1, 9, size=k)
        v = rng.integers(1, 9, size=k)
        cap = int(rng.integers(5, 20))
        lp = knapsack(w, v, cap)
        best = min(-sum(v[i] for i in range(k) if mask >> i & 1)
                   for mask in range(1 << k) if sum(w[i] for i in range(k) if mask >> i & 1) <= cap)
        sol = solve_milp(lp)
        assert sol.objective_value == pytest.approx(best, abs=1e-9)
        assert sol.objective_value >= solve_lp(lp.relaxed()).objective_value - 1e-9


def test_node_budget_is_explicit():
    lp = knapsack([3, 5, 7, 9, 11, 13], [4, 6, 8, 10, 12, 14], 20)
    with pytest.raises(NodeBudgetExceeded):
        solve_milp(lp, node_budget=2)


def test_certify_within_tolerance():
    sol = Solution("optimal", np.array([1.0000000001, 2.0]), 0.0)
    assert certify_integral(sol).tolist() == [1, 2]


def test_certify_reports_offending_variable():
    sol = Solution("optimal", np.array([0.5, 1.0]), 0.0, names=(("x", 0), ("x", 1)))
    with pytest.raises(IntegralityError) as err:
        certify_integral(sol)
    assert err.value.index == 0 and err.value.tag == ("x", 0)


def test_dump_lists_every_row():
    b = LPBuilder()
    x = b.add_var(("x", 1), 2.0, integer=True)
    y = b.add_var(("y", 1), 1.0)
    b.add_eq({x: 1.0, y: 1.0}, 3.0, name="total")
    b.add_ge({x: 1.0}, 1.0, name="floor")
    text = dump_lp(b.build())
    assert "min: +2 ('x', 1) +1 ('y', 1)" in text
    assert "eq total: +1 ('x', 1) +1 ('y', 1) = 3" in text
    assert "ge floor: +1 ('x', 1) >= 1" in text
    assert "bound ('x', 1): 0 <= . <= inf int" in text


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.data())
def test_transport_lps_have_integral_vertices(n, data):
    supply = data.draw(st.lists(st.integers(0, 5), min_size=n, max_size=n))
    demand = data.draw(st.lists(st.integers(0, 5), min_size=n, max_size=n))
    cost = data.draw(st.lists(st.integers(0, 9), min_size=n * n, max_size=n * n))
    b = LPBuilder()
    x = [[b.add_var((i, j), cost[i * n + j]) for j in range(n)] for i in range(n)]
    for i in range(n):
        b.add_le({x[i][j]: 1.0 for j in range(n)}, supply[i])
    for j in range(n):
        b.add_ge({x[i][j]: 1.0 for i in range(n)}, min(demand[j], sum(supply)))
    sol = solve_lp(b.build())
    if sol.optimal:
        certify_integral(sol)
