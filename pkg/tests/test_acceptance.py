"""Acceptance criteria 1-9, each reporting a single pass/fail line."""

import time

import mpmath
import numpy as np
import pytest

from stochamod import bounds
from stochamod.cli import main
from stochamod.decomposed import solve_decomposed, solve_rebalance
from stochamod.demand import (
    DemandTrace,
    bootstrap_model,
    estimate_subexponential,
    perfect_model,
    point_model,
)
from stochamod.netflow import (
    CostModel,
    DemandSample,
    FleetState,
    OutstandingDemand,
    RoadNetwork,
)
from stochamod.saa import bundle_samples, evaluate_objective, solve_saa
from stochamod.selftest import bundling_sweep, integrality_sweep, minima_sweep, random_instance
from stochamod.sim import (
    MPCController,
    ReactiveController,
    simulate,
    uniform_targets,
)


def test_criterion_1_integrality(acceptance):
    t0 = time.perf_counter()
    count, mismatches, detail = integrality_sweep(500, seed=0, milp_every=10)
    secs = time.perf_counter() - t0
    ok = mismatches == 0 and secs <= 120
    acceptance(1, ok, f"{count} LPs integral, {detail}, objective mismatches={mismatches}, "
                      f"{secs:.1f}s (budget 120s)")
    assert ok


def test_criterion_2_decomposition(acceptance):
    rng = np.random.default_rng(2024)
    above = tight = 0
    worst_gap = 0.0
    for _ in range(50):
        inst = random_instance(rng, max_n=3, max_T=3, max_K=4, max_m=5, waiting=True)
        b = bundle_samples(inst.samples)
        res = solve_decomposed(inst.fleet, inst.outstanding, b, inst.costs, inst.net)
        cost = evaluate_objective(res.combined, inst.samples, inst.outstanding, inst.costs)
        _, best = solve_saa(inst.fleet, inst.outstanding, b, inst.costs, inst.net)
        above += cost >= best - 1e-6
        none = OutstandingDemand.none(inst.fleet.n)
        _, lp_opt = solve_rebalance(inst.fleet, b, inst.costs, inst.net)
        _, milp_opt = solve_saa(inst.fleet, none, b, inst.costs, inst.net)
        tight += abs(lp_opt - milp_opt) <= 1e-6
        worst_gap = max(worst_gap, abs(lp_opt - milp_opt))
    ok = above == 50 and tight == 50
    acceptance(2, ok, f"decomposed >= MILP on {above}/50, LP = MILP without waiters on "
                      f"{tight}/50 (max gap {worst_gap:.1e})")
    assert ok


def test_criterion_3_bundling(acceptance):
    _, bad, _ = bundling_sweep(100, seed=1)
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng([3, seed])
        samples = [DemandSample(rng.poisson(3.0, size=(2, 2, 2))) for _ in range(640)]
        _, b = estimate_subexponential(np.concatenate([s.lam.ravel() for s in samples]))
        hits += bundle_samples(samples).num_unique <= bounds.bundled_size_bound(640, 2, 2, b, 0.05)
    ok = bad == 0 and hits >= 95
    acceptance(3, ok, f"bundled = naive on {100 - bad}/100, size bound held in {hits}/100")
    assert ok


def test_criterion_4_convergence_rate(acceptance):
    net = RoadNetwork.uniform(2, 1)
    fleet = FleetState.idle([2, 1], 2)
    costs = CostModel.uniform(2, 2, move=1.0, drop=5.0)
    Ks = [10, 40, 160, 640]
    spread = []
    for K in Ks:
        vals = []
        for seed in range(30):
            rng = np.random.default_rng([seed, K])
            samples = [DemandSample(rng.poisson(1.5, size=(2, 2, 2))) for _ in range(K)]
            vals.append(solve_saa(fleet, OutstandingDemand.none(2), bundle_samples(samples),
                                  costs, net)[1])
        spread.append(np.std(vals, ddof=1))
    slope = float(np.polyfit(np.log(Ks), np.log(spread), 1)[0])
    ok = -0.7 <= slope <= -0.3
    acceptance(4, ok, f"log-log slope {slope:.3f} (target [-0.7, -0.3])")
    assert ok


def test_criterion_5_minima_continuity(acceptance):
    count, bad, _ = minima_sweep(1000, seed=5)
    acceptance(5, bad == 0, f"{count - bad}/{count} function pairs satisfy the inequality")
    assert bad == 0


def test_criterion_6_oracle_inequality(acceptance):
    inst = bounds.standard_instance()
    sigma = bounds.hoeffding_sigma(inst)
    K = bounds.required_samples(sigma, sigma, inst.n, inst.T, inst.m, 0.1)
    rep = bounds.verify_oracle_inequality(inst, K=K, delta=0.1, trials=200, seed=0)
    ok = rep.empirical_violation_rate <= 0.1
    acceptance(6, ok, f"K={K}, bound={rep.bound_terms['total']:.4f}, violation rate "
                      f"{rep.empirical_violation_rate:.3f} over 200 trials (delta 0.1)")
    assert ok


STATIONS = 10
FLEET = 50
HORIZON = 6
DT = 300
DURATION = 7200
RATE = 0.02


def acceptance_network():
    """Ten stations scattered in the unit square, travel time one step per half unit."""
    pts = np.random.default_rng(1).uniform(0, 1, size=(STATIONS, 2))
    dist = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    tau = np.maximum(1, np.ceil(dist / 0.5)).astype(int)
    np.fill_diagonal(tau, 1)
    return RoadNetwork(tau, DT)


def cli_trace(tmp_path, seed):
    path = tmp_path / f"trace{seed}.csv"
    code = main(["gen-trace", "--n", str(STATIONS), "--duration", str(DURATION),
                 "--rate", str(RATE), "--profile", "mixture", "--seed", str(seed),
                 "--out", str(path)])
    assert code == 0
    return DemandTrace.read_csv(path, STATIONS, DURATION)


def acceptance_controllers(net, model, trace, seed):
    costs = CostModel.default(net, HORIZON)
    return {
        "reactive": ReactiveController(net),
        "mpc-point": MPCController("mpc-point", net, point_model(model), 1, costs, 0, seed),
        "mpc-saa": MPCController("mpc-saa", net, model, 50, costs, 0, seed),
        "mpc-perfect": MPCController("mpc-perfect", net, perfect_model(trace, strict=False), 1,
                                     costs, 0, seed),
    }


@pytest.fixture(scope="module")
def history(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("history")
    return bootstrap_model([cli_trace(tmp, 1000 + k) for k in range(30)], DT)


def test_criterion_7_conservation(acceptance, tmp_path, history):
    net = acceptance_network()
    trace = cli_trace(tmp_path, 7)
    counts = set()
    waits_ok = True

    def watch(sim):
        counts.add(sim.vehicle_count())

    runs = []
    for _ in range(2):
        ctrl = acceptance_controllers(net, history, trace, 7)["mpc-saa"]
        st = simulate(net, uniform_targets(FLEET, STATIONS), trace, ctrl, HORIZON,
                      duration_s=DURATION, on_tick=watch)
        waits_ok &= [a - r for a, r in zip(st.assign_s, st.request_s)] == st.waits_s
        runs.append(st.to_json() + st.epochs_csv())
    ok = counts == {FLEET} and waits_ok and runs[0] == runs[1]
    acceptance(7, ok, f"vehicle counts seen {sorted(counts)}, waits consistent={waits_ok}, "
                      f"reruns identical={runs[0] == runs[1]}")
    assert ok


@pytest.mark.slow
def test_criterion_8_controller_ordering(acceptance, tmp_path, history):
    net = acceptance_network()
    seeds = range(20)
    waits = {name: [] for name in ("reactive", "mpc-point", "mpc-saa", "mpc-perfect")}
    t0 = time.perf_counter()
    for seed in seeds:
        trace = cli_trace(tmp_path, seed)
        for name, ctrl in acceptance_controllers(net, history, trace, seed).items():
            st = simulate(net, uniform_targets(FLEET, STATIONS), trace, ctrl, HORIZON,
                          duration_s=DURATION)
            waits[name].append(st.mean)
    secs = time.perf_counter() - t0
    mean = {k: float(np.mean(v)) for k, v in waits.items()}
    ordered = (mean["mpc-perfect"] <= mean["mpc-saa"] <= mean["mpc-point"]
               and mean["mpc-saa"] < mean["reactive"])
    gain = 1 - mean["mpc-saa"] / mean["mpc-point"]
    ok = ordered and gain >= 0.20 and secs <= 900
    table = ", ".join(f"{k} {v:.1f}s" for k, v in mean.items())
    acceptance(8, ok, f"mean wait over {len(seeds)} seeds: {table}; SAA vs point "
                      f"{100 * gain:.1f}% lower; {secs:.0f}s (budget 900s)")
    assert ok


def test_criterion_9_formulas(acceptance):
    mpmath.mp.dps = 50
    ref_err = 2 / mpmath.sqrt(100) * mpmath.sqrt(4 * 2 * mpmath.log(4) - mpmath.log(0.1) / 2)
    ref_k = int(mpmath.ceil(64 * (4 * 2 * mpmath.log(4) - mpmath.log(mpmath.mpf("0.1")) / 2)))
    err = bounds.stochastic_error(1, 100, 2, 2, 4, 0.1)
    k = bounds.required_samples(1, 1, 2, 2, 4, 0.1)
    ok = (abs(err - 0.6998) <= 1e-3 and abs(err - float(ref_err)) <= 1e-12
          and k == 784 == ref_k)
    acceptance(9, ok, f"stochastic_error={err:.6f} (mpmath {float(ref_err):.6f}), "
                      f"required_samples={k} (mpmath {ref_k})")
    assert ok
