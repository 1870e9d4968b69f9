import numpy as np
import pytest
from scipy import stats

from stochamod.demand import (
    DemandHistory,
    DemandTrace,
    TraceError,
    bootstrap_model,
    estimate_subexponential,
    generate_trace,
    perfect_model,
    point_model,
    poisson_model,
    sample_file_model,
    write_sample_file,
)

H0 = DemandHistory.at(0, 300)


def trace(rows, n=2, duration=None):
    arr = np.array(rows, dtype=int).reshape(-1, 3)
    return DemandTrace(arr[:, 0], arr[:, 1], arr[:, 2], n, duration)


def test_zero_mean_poisson_gives_zero_samples():
    m = poisson_model(np.zeros((2, 2, 3)))
    assert all(s.lam.sum() == 0 for s in m.sample(H0, 3, 5, seed=1))


def test_poisson_mean_law_of_large_numbers():
    mean = np.zeros((2, 2, 1))
    mean[0, 1, 0] = 3.0
    s = poisson_model(mean).sample(H0, 1, 10_000, seed=123)
    avg = np.mean([x.lam[0, 1, 0] for x in s])
    assert abs(avg - 3.0) <= 0.06


def test_poisson_is_deterministic_in_seed():
    m = poisson_model(np.full((2, 2, 2), 1.3))
    a = [s.lam for s in m.sample(H0, 2, 4, seed=9)]
    b = [s.lam for s in m.sample(H0, 2, 4, seed=9)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_poisson_rejects_negative_mean():
    with pytest.raises(ValueError):
        poisson_model(-np.ones((1, 1, 1)))


def test_poisson_goodness_of_fit():
    mean = np.full((1, 1, 1), 2.0)
    draws = np.array([s.lam[0, 0, 0] for s in poisson_model(mean).sample(H0, 1, 5000, seed=4)])
    k = np.arange(0, 7)
    observed = np.array([np.sum(draws == v) for v in k] + [np.sum(draws >= 7)])
    probs = np.append(stats.poisson.pmf(k, 2.0), stats.poisson.sf(6, 2.0))
    _, p = stats.chisquare(observed, probs * draws.size)
    assert p > 0.01


def test_aligned_poisson_reads_the_clock_window():
    mean = np.zeros((1, 1, 4))
    mean[0, 0, 2] = 5.0
    m = poisson_model(mean, aligned=True)
    assert m.mean(DemandHistory.at(600, 300), 2)[0, 0].tolist() == [5.0, 0.0]


def test_binning_uses_floor_plus_one():
    tr = trace([[310, 0, 1]])
    assert tr.binned(0, 300, 3)[0, 1].tolist() == [0, 1, 0]


def test_binning_conserves_trips():
    tr = generate_trace(4, 3600, 0.05, seed=3)
    assert tr.binned(0, 300, 12).sum() == len(tr)
    assert tr.binned(600, 300, 2).sum() == np.sum((tr.t >= 600) & (tr.t < 1200))


def test_trace_validation():
    with pytest.raises(TraceError):
        trace([[10, 0, 1], [5, 1, 0]])
    with pytest.raises(TraceError):
        trace([[10, 0, 2]])


def test_trace_csv_round_trip(tmp_path):
    tr = generate_trace(3, 1200, 0.02, seed=5)
    tr.write_csv(tmp_path / "t.csv")
    back = DemandTrace.read_csv(tmp_path / "t.csv", 3)
    assert np.array_equal(back.t, tr.t) and np.array_equal(back.dest, tr.dest)
    assert (tmp_path / "t.csv").read_text().startswith("t,origin,dest\n")


def test_single_day_bootstrap_repeats_the_day():
    day = trace([[10, 0, 1], [400, 1, 0]])
    m = bootstrap_model([day], 300)
    expected = day.binned(0, 300, 2)
    assert all(np.array_equal(s.lam, expected) for s in m.sample(H0, 2, 7, seed=0))


def test_bootstrap_picks_days_uniformly():
    m = bootstrap_model([trace([[0, 0, 1]]), trace([[0, 1, 0]])], 300)
    s = m.sample(H0, 1, 1000, seed=2)
    share = np.mean([x.lam[0, 1, 0] for x in s])
    assert abs(share - 0.5) <= 0.05


def test_bootstrap_rejects_empty_history():
    with pytest.raises(ValueError):
        bootstrap_model([], 300)


def test_perfect_model_repeats_truth():
    tr = trace([[5, 0, 1], [320, 1, 0]], duration=900)
    s = perfect_model(tr).sample(H0, 3, 4)
    assert np.var([x.lam for x in s], axis=0).max() == 0
    assert s[0].lam[1, 0, 1] == 1


def test_perfect_model_horizon_past_trace():
    tr = trace([[5, 0, 1]], duration=600)
    with pytest.raises(IndexError):
        perfect_model(tr).sample(H0, 3, 1)
    assert perfect_model(tr, strict=False).sample(H0, 3, 1)[0].lam.sum() == 1


def test_point_model_rounds_the_mean():
    mean = np.array([[[0.4, 0.6]]])
    s = point_model(poisson_model(mean)).sample(H0, 2, 3, seed=0)
    assert [x.lam[0, 0].tolist() for x in s] == [[0, 1]] * 3


def test_sample_file_round_trip(tmp_path):
    samples = poisson_model(np.full((2, 2, 3), 0.7)).sample(H0, 3, 4, seed=1)
    write_sample_file(samples, tmp_path / "s.csv")
    back = sample_file_model(tmp_path / "s.csv", 2).sample(H0, 3, 4)
    assert all(np.array_equal(a.lam, b.lam) for a, b in zip(samples, back))


def test_subexponential_estimates():
    assert estimate_subexponential([4.0] * 40) == (0.0, 1.0)
    x = np.random.default_rng(0).poisson(3.0, size=20_000)
    s2, b = estimate_subexponential(x)
    assert abs(s2 - 3.0) <= 0.2 and b >= 1
    s2b, _ = estimate_subexponential(2 * x)
    assert s2b == pytest.approx(4 * s2)
    with pytest.raises(ValueError):
        estimate_subexponential([1.0] * 10)


def test_generated_trace_count_concentration():
    r, D = 0.05, 4000
    for seed in range(5):
        n = len(generate_trace(5, D, r, seed=seed))
        assert abs(n - r * D) <= 4 * np.sqrt(r * D)


def test_generated_trace_is_deterministic():
    a = generate_trace(6, 3600, 0.03, "mixture", seed=8)
    b = generate_trace(6, 3600, 0.03, "mixture", seed=8)
    assert np.array_equal(a.t, b.t) and np.array_equal(a.origin, b.origin)
    assert len(generate_trace(3, 100, 0.0, seed=1)) == 0
