import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import vertex_lp_min
from paneldpd.constraints import ConstraintSet, evaluate_h
from paneldpd.divergence import DpdConfig, dpd_gradient, dpd_objective, nll_gradient
from paneldpd.model import ModelParams
from paneldpd.scp import (
    DEFAULT_RHO,
    MLE,
    AffineModel,
    InfeasibleSubproblemError,
    ScpConfig,
    linearize,
    scp_fit,
    solve_subproblem,
)
from paneldpd.simulate import SimConfig, simulate_dataset


@pytest.fixture(scope="module")
def data():
    return simulate_dataset(SimConfig(m=100, seed=42), 0)


def test_config_defaults():
    cfg = ScpConfig()
    assert cfg.rho == DEFAULT_RHO
    assert cfg.max_outer == 2000
    assert ScpConfig(radius_mode="fixed").max_outer == 10
    assert cfg.effective_rho()[0] == 0.0
    assert ScpConfig(gauge="none").effective_rho()[0] == DEFAULT_RHO[0]
    with pytest.raises(ValueError):
        ScpConfig(rho=(0.1, 0.1, 0.0, 0.1, 0.1))
    with pytest.raises(ValueError):
        ScpConfig(radius_mode="other")


def test_linearize(data, theta):
    cfg = DpdConfig(0.5)
    model = linearize(data, theta, cfg)
    assert model.value == dpd_objective(data, theta, cfg)
    np.testing.assert_array_equal(model.gradient, dpd_gradient(data, theta, cfg))
    np.testing.assert_array_equal(linearize(data, theta, MLE).gradient, nll_gradient(data, theta))
    # along -grad the affine model falls at rate |grad|^2
    step = -1e-3 * model.gradient
    x = theta.to_array()
    assert model(x + step, x) - model.value == pytest.approx(-1e-3 * model.gradient @ model.gradient, rel=1e-12)


def test_subproblem_zero_gradient(theta):
    out = solve_subproblem(AffineModel(0.0, np.zeros(5)), theta, ConstraintSet(), ScpConfig(gauge="none"))
    assert out == theta


def test_subproblem_box_vertex(theta):
    cfg = ScpConfig(gauge="none")
    out = solve_subproblem(AffineModel(0.0, np.array([1.0, 0, 0, 0, 0])), theta, None, cfg)
    np.testing.assert_allclose(out.to_array(), theta.to_array() - np.array([DEFAULT_RHO[0], 0, 0, 0, 0]))


def test_subproblem_lands_on_face():
    th = ModelParams(4.5, 0.62, 0.5, 0.6, 0.2)
    cfg = ScpConfig(gauge="none")
    grad = np.array([0.0, 0.5, 0.0, -1.0, 0.0])  # push a2 up, a1 gently down
    out = solve_subproblem(AffineModel(0.0, grad), th, ConstraintSet(), cfg)
    x0, rho = th.to_array(), np.asarray(cfg.rho)
    ref, ref_x = vertex_lp_min(grad, x0 - rho, x0 + rho, ConstraintSet().a_matrix, np.zeros(2))
    assert grad @ out.to_array() == pytest.approx(ref, abs=1e-10)
    assert out.a1 == pytest.approx(out.a2, abs=1e-12)


@settings(max_examples=100)
@given(
    hnp.arrays(np.float64, 5, elements=st.floats(-2, 2)),
    hnp.arrays(np.float64, 5, elements=st.floats(0.05, 3.0)),
    st.booleans(),
)
def test_subproblem_vertex_oracle(grad, x, gauge):
    x = x.copy()
    x[3] = min(x[3], x[1])
    x[4] = min(x[4], x[2])
    cfg = ScpConfig(gauge="zeta" if gauge else "none")
    th = ModelParams.from_array(x)
    out = solve_subproblem(AffineModel(0.0, grad), th, ConstraintSet(), cfg).to_array()
    rho = cfg.effective_rho()
    lo, hi = np.maximum(x - rho, 1e-6), np.maximum(x + rho, 1e-6)
    ref, _ = vertex_lp_min(grad, lo, hi, ConstraintSet().a_matrix, np.zeros(2))
    assert grad @ out - ref <= 1e-10
    assert np.all(ConstraintSet().a_matrix @ out >= -1e-12)


def test_infeasible_start(data):
    bad = ModelParams(4.6, 0.4, 0.4, 0.5, 0.1)  # a1 < a2
    with pytest.raises(InfeasibleSubproblemError):
        scp_fit(data, DpdConfig(0.5), ScpConfig(theta_init=bad))


def test_adaptive_fit_descends_and_certifies(data):
    res = scp_fit(data, DpdConfig(0.5))
    values = [v for _, v in res.trace]
    assert all(b < a for a, b in zip(values, values[1:]))
    assert res.converged
    assert res.kkt.certified()
    assert np.all(evaluate_h(ConstraintSet(), res.theta_hat) >= -1e-10)
    assert res.theta_hat.zeta == 4.6  # gauge keeps the rate at its start


def test_fixed_mode_literal(data):
    res = scp_fit(data, DpdConfig(0.2), ScpConfig(radius_mode="fixed"))
    assert res.iterations == 10
    x = [t for t, _ in res.trace]
    steps = np.abs(np.diff(np.vstack(x), axis=0))
    assert np.all(steps <= np.asarray(DEFAULT_RHO) + 1e-12)
    assert res.descent_violations >= 0


def test_feasible_iterates_from_boundary(data):
    start = ModelParams(4.6, 0.5, 0.4, 0.5, 0.4)  # both constraints active
    res = scp_fit(data, DpdConfig(0.5), ScpConfig(theta_init=start, max_outer=200))
    for x, _ in res.trace:
        assert np.all(ConstraintSet().a_matrix @ x >= -1e-12)


def test_mle_fit_beats_truth(data, theta):
    from paneldpd.model import canonical_scale, neg_log_likelihood

    res = scp_fit(data, MLE, ScpConfig(restricted=False))
    assert res.estimator == "mle"
    assert neg_log_likelihood(data, res.theta_hat) <= neg_log_likelihood(data, canonical_scale(theta, 4.6)) + 1e-9


def test_kkt_end_to_end_tight(data):
    res = scp_fit(data, DpdConfig(0.5))
    assert res.kkt.certified(1e-4, 1e-8, 1e-6, 0.0)


def test_unrestricted_has_no_multipliers(data):
    res = scp_fit(data, DpdConfig(0.5), ScpConfig(restricted=False))
    assert res.lambda_hat.size == 0 and res.active == ()
    assert not res.restricted


def test_gauge_none_trace_moves_zeta(data):
    res = scp_fit(data, DpdConfig(0.5), ScpConfig(gauge="none", max_outer=50))
    assert any(abs(t[0] - 4.6) > 0 for t, _ in res.trace[1:])


def test_fit_result_dict(data):
    res = scp_fit(data, DpdConfig(0.5), ScpConfig(max_outer=30))
    d = res.to_dict()
    assert set(d["theta_hat"]) == {"zeta", "a1", "b1", "a2", "b2"}
    assert d["gamma"] == 0.5
