import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from paneldpd.model import interval_increments, pmf
from paneldpd.simulate import (
    DEFAULT_THETA,
    EstimatorSpec,
    SimConfig,
    draw_counts,
    draw_frailty,
    replication_rng,
    run_replications,
    simulate_dataset,
    summarize,
)
from paneldpd.scp import ScpConfig


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(m=0)
    with pytest.raises(ValueError):
        SimConfig(epsilon=1.0)
    with pytest.raises(ValueError):
        SimConfig(frailty_convention="shape")
    with pytest.raises(ValueError):
        SimConfig(zero_inflation=1.0)


@pytest.mark.parametrize("eps,m,expected", [(0.006, 100, 1), (0.044, 100, 5), (0.085, 100, 9), (0.153, 100, 16), (0.0, 100, 0)])
def test_contaminant_count(eps, m, expected):
    # m - floor((1 - eps) m), computed in floating point like the generator
    assert SimConfig(epsilon=eps, m=m).n_contaminated == expected


def test_exponential_mean():
    cfg = SimConfig(m=100_000, seed=1)
    z = draw_frailty(cfg, replication_rng(1, 0))
    mean = 1 / cfg.theta_true.zeta
    assert abs(z.mean() - mean) < 4 * mean / np.sqrt(cfg.m)
    assert np.all(z > 0)


def test_scale_convention_mean():
    cfg = SimConfig(m=100_000, seed=1, frailty_convention="scale")
    z = draw_frailty(cfg, replication_rng(1, 0))
    assert abs(z.mean() - 4.5) < 4 * 4.5 / np.sqrt(cfg.m)


def test_mixture_mean():
    cfg = SimConfig(m=100_000, epsilon=0.5, seed=2)
    z = draw_frailty(cfg, replication_rng(2, 0))
    zeta = cfg.theta_true.zeta
    # exponential variance 1/zeta^2; inverse Gaussian (mean zeta, shape zeta) variance zeta^2
    mean = 0.5 / zeta + 0.5 * zeta
    var = 0.5 * (1 / zeta**2 + zeta**2) + 0.25 * (zeta - 1 / zeta) ** 2
    assert abs(z.mean() - mean) < 4 * np.sqrt(var / cfg.m)


def test_identical_seed_identical_frailty():
    cfg = SimConfig(m=50, epsilon=0.1, seed=9)
    np.testing.assert_array_equal(draw_frailty(cfg, replication_rng(9, 3)), draw_frailty(cfg, replication_rng(9, 3)))


def test_zero_contamination_stream_untouched():
    cfg = SimConfig(m=100, seed=5)
    rng = replication_rng(5, 0)
    manual = rng.exponential(1 / 4.5, 100)
    np.testing.assert_array_equal(draw_frailty(cfg, replication_rng(5, 0)), manual)
    # the counts continue the same stream
    rng = replication_rng(5, 0)
    z = rng.exponential(1 / 4.5, 100)
    counts = draw_counts(z, cfg.theta_true, cfg.schedule, rng).counts
    np.testing.assert_array_equal(simulate_dataset(cfg, 0).counts, counts)


def test_zero_frailty_gives_zero_counts(theta, schedule, rng):
    assert np.all(draw_counts(np.zeros(10), theta, schedule, rng).counts == 0)
    with pytest.raises(ValueError):
        draw_counts(-np.ones(2), theta, schedule, rng)


def test_cell_mean_tower_property(theta, schedule):
    data = simulate_dataset(SimConfig(m=100_000, seed=3), 0)
    e = theta.a1 * interval_increments(schedule, theta.b1)[0] / theta.zeta
    x = data.counts[:, 0]
    assert abs(x.mean() - e) < 4 * x.std() / np.sqrt(data.m)


def test_marginal_law_matches_pmf(theta, schedule):
    data = simulate_dataset(SimConfig(m=200_000, seed=4), 0)
    keys, freq = np.unique(data.counts, axis=0, return_counts=True)
    p = pmf(keys, theta, schedule)
    big = p >= 1e-3
    se = np.sqrt(p[big] * (1 - p[big]) / data.m)
    assert np.all(np.abs(freq[big] / data.m - p[big]) < 4 * se)


def test_zero_inflation_preserves_means(theta, schedule):
    pure = simulate_dataset(SimConfig(m=200_000, seed=6), 0).counts
    zi = simulate_dataset(SimConfig(m=200_000, seed=6, zero_inflation=0.5), 0).counts
    se = np.sqrt(zi.var(axis=0) / zi.shape[0] + pure.var(axis=0) / pure.shape[0])
    assert np.all(np.abs(zi.mean(axis=0) - pure.mean(axis=0)) < 4 * se)
    # silenced with prob pi, otherwise all-zero with prob zeta'/(zeta'+S) where zeta' = zeta (1 - pi)
    from paneldpd.model import total_rate

    rate = theta.zeta * 0.5
    p0 = 0.5 + 0.5 * rate / (rate + total_rate(theta, schedule))
    frac = np.mean(zi.sum(axis=1) == 0)
    assert abs(frac - p0) < 4 * np.sqrt(p0 * (1 - p0) / zi.shape[0])


@given(st.integers(0, 2**63), st.integers(0, 1000))
def test_substreams_reproducible(seed, index):
    a = replication_rng(seed, index).integers(0, 2**32, 4)
    b = replication_rng(seed, index).integers(0, 2**32, 4)
    np.testing.assert_array_equal(a, b)


def test_single_replication_bias_exact():
    cfg = SimConfig(m=60, seed=12)
    spec = EstimatorSpec(gamma=0.5)
    table = run_replications(cfg, 1, [spec])
    from paneldpd.simulate import fit_estimator

    est = fit_estimator(simulate_dataset(cfg, 0), spec).theta_hat.to_array()
    s = table.summaries[0]
    np.testing.assert_array_equal(s.bias, est - DEFAULT_THETA.to_array())


def test_mse_dominates_squared_bias():
    cfg = SimConfig(m=60, seed=13)
    fast = ScpConfig(radius_mode="fixed")
    table = run_replications(cfg, 6, [EstimatorSpec(gamma=0.5, scp=fast), EstimatorSpec(None, restricted=False, scp=fast)])
    for s in table.summaries:
        assert np.all(s.mse >= s.bias**2 - 1e-15)
        assert s.n_ok + s.n_failed == 6


def test_replications_thread_invariant():
    cfg = SimConfig(m=40, epsilon=0.044, seed=21)
    specs = [EstimatorSpec(gamma=0.3, scp=ScpConfig(radius_mode="fixed"))]
    one = run_replications(cfg, 4, specs, threads=1).to_dict()
    two = run_replications(cfg, 4, specs, threads=2).to_dict()
    assert one == two


def test_summarize_records_failures(theta):
    s = summarize("x", [theta.to_array(), None], theta)
    assert s.n_ok == 1 and s.n_failed == 1
    np.testing.assert_array_equal(s.bias, 0.0)
