import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from paneldpd.gof import bootstrap_pvalue, expected_counts, t_statistic
from paneldpd.model import ModelParams, ObservationSchedule, PanelDataset, interval_increments
from paneldpd.simulate import EstimatorSpec, SimConfig, simulate_dataset
from paneldpd.scp import ScpConfig


def test_expected_counts_monte_carlo(theta, schedule):
    data = simulate_dataset(SimConfig(m=1_000_000, seed=17), 0)
    e = expected_counts(theta, schedule).ravel()
    se = data.counts.std(axis=0) / np.sqrt(data.m)
    assert np.all(np.abs(data.counts.mean(axis=0) - e) < 4 * se)


def test_expected_counts_linear_and_positive(theta, schedule):
    e = expected_counts(theta, schedule)
    assert e.shape == (3, 2) and np.all(e > 0)
    scaled = ModelParams(theta.zeta, 3 * theta.a1, theta.b1, theta.a2, theta.b2)
    np.testing.assert_allclose(expected_counts(scaled, schedule)[:, 0], 3 * e[:, 0])
    np.testing.assert_allclose(expected_counts(scaled, schedule)[:, 1], e[:, 1])


def test_t_zero_when_counts_equal_expectations():
    sched = ObservationSchedule((1.0, 2.0))
    # b = 1: Delta = 1, so e = a / zeta
    th = ModelParams(1.0, 2.0, 1.0, 3.0, 1.0)
    data = PanelDataset(sched, [[2, 3], [2, 3]])
    assert t_statistic(data, th) == 0.0


def test_t_hand_computation():
    sched = ObservationSchedule((0.25, 1.0))
    th = ModelParams(2.0, 1.0, 0.5, 0.5, 1.0)
    e1 = 1.0 / 2.0 * (1.0 - 0.5)  # a1/zeta * (1 - 0.25^0.5)
    e2 = 0.5 / 2.0 * (1.0 - 0.25)
    data = PanelDataset(sched, [[1, 2]])
    expected = abs(1 - e1) / e1 + abs(2 - e2) / e2
    assert t_statistic(data, th) == pytest.approx(expected, rel=1e-14)


@given(st.permutations(list(range(12))))
def test_t_reordering_invariant(perm):
    data = simulate_dataset(SimConfig(m=12, seed=3), 0)
    th = ModelParams(4.5, 0.9, 0.5, 0.6, 0.2)
    shuffled = PanelDataset(data.schedule, data.counts[list(perm)])
    assert t_statistic(shuffled, th) == pytest.approx(t_statistic(data, th), rel=1e-14)


def test_pvalue_one_when_observed_is_minimal():
    sched = ObservationSchedule((1.0, 2.0))
    th = ModelParams(1.0, 2.0, 1.0, 3.0, 1.0)
    data = PanelDataset(sched, [[2, 3]] * 5)
    res = bootstrap_pvalue(data, th, 40, seed=1)
    assert res.t_stat == 0.0
    assert res.p_value == 1.0


def test_pvalue_lattice_and_determinism(theta):
    data = simulate_dataset(SimConfig(m=30, seed=5), 0)
    a = bootstrap_pvalue(data, theta, 37, seed=8)
    b = bootstrap_pvalue(data, theta, 37, seed=8)
    assert a == b
    assert a.p_value * 37 == pytest.approx(round(a.p_value * 37), abs=1e-12)
    assert a.mode == "fixed" and a.b_samples == 37 and a.n_failed == 0


def test_single_sample_pvalue(theta):
    data = simulate_dataset(SimConfig(m=30, seed=5), 0)
    assert bootstrap_pvalue(data, theta, 1).p_value in (0.0, 1.0)


def test_threads_do_not_change_result(theta):
    data = simulate_dataset(SimConfig(m=30, seed=5), 0)
    assert bootstrap_pvalue(data, theta, 20, seed=2, threads=1) == bootstrap_pvalue(data, theta, 20, seed=2, threads=2)


def test_refit_mode(theta):
    data = simulate_dataset(SimConfig(m=30, seed=5), 0)
    spec = EstimatorSpec(gamma=0.5, scp=ScpConfig(radius_mode="fixed"))
    res = bootstrap_pvalue(data, theta, 5, seed=2, refit=True, spec=spec)
    assert res.mode == "refit"
    assert res.b_samples + res.n_failed == 5


def test_table7_magnitude():
    # four inspection intervals and fifty subjects, gamma = 0.5 fit
    from paneldpd.simulate import fit_estimator

    sched = ObservationSchedule((0.01, 0.3, 0.6, 0.9, 1.2))
    data = simulate_dataset(SimConfig(m=50, schedule=sched, seed=31), 0)
    fit = fit_estimator(data, EstimatorSpec(gamma=0.5))
    res = bootstrap_pvalue(data, fit.theta_hat, 500, seed=31)
    # same order of magnitude as the real-data statistic (cells here have e < 1, so T is near
    # twice the zero fraction per event type)
    assert 1.0 <= res.t_stat < 10.0
    assert res.p_value > 0.05


def test_bad_b(theta):
    data = simulate_dataset(SimConfig(m=10, seed=5), 0)
    with pytest.raises(ValueError):
        bootstrap_pvalue(data, theta, 0)
