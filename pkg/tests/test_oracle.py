import numpy as np
import pytest
from _problems import ScalarAffine, ZeroResidual, burgers_with_objective

from fpisens.numerics import LinearSolveConfig
from fpisens.oracle import (
    OracleConfig,
    central_fd_history,
    complex_step_history,
    converged_fd_sensitivity,
    dense_one_step_diff,
    spectral_norm,
)
from fpisens.problem import CS_STEP
from fpisens.solvers import SolverConfig, run_primal

DIRECT = LinearSolveConfig(method="direct_dense")
EXACT = SolverConfig(cfl0=10.0, cfl_ramp_beta=10.0, cfl_max=1e14, residual_reduction_target=1e-15, linear=DIRECT)


def test_oracle_config_steps():
    assert OracleConfig().resolved_step == CS_STEP <= 1e-20
    assert OracleConfig(method="central_fd").resolved_step == 1e-6
    assert OracleConfig(step=1e-40).resolved_step == 1e-40


def test_complex_step_zero_direction(burgers5):
    hist = complex_step_history(burgers5, burgers5.default_design(), EXACT, [0.0, 0.0])
    assert np.all(hist.values == 0.0)


def test_complex_step_rejects_large_step(burgers5):
    with pytest.raises(ValueError):
        complex_step_history(burgers5, burgers5.default_design(), EXACT, [1.0, 0.0], h=1e-8)


@pytest.mark.parametrize("a", [2.0, 0.5])
def test_complex_step_closed_form(a):
    prob = ScalarAffine(a)
    hist = complex_step_history(prob, prob.default_design(), EXACT, [1.0])
    # u* = A_0 / a with A_0 = 1 at zero amplitude
    assert hist.values[-1] == pytest.approx(2.0 / a**2, rel=1e-13)
    assert hist.values[0] == 0.0


def test_complex_step_matches_central_fd(burgers5):
    d = burgers5.default_design()
    for e in np.eye(2):
        cs = complex_step_history(burgers5, d, EXACT, e).final
        fd = central_fd_history(burgers5, d, EXACT, e, h=1e-6)
        assert abs(converged_fd_sensitivity(fd, 1e-6) - cs) <= 1e-5 * abs(cs)


def test_central_fd_exact_for_linear_objective():
    prob = burgers_with_objective("area")
    d = prob.default_design()
    for j, e in enumerate(np.eye(2)):
        fd = central_fd_history(prob, d, EXACT, e, h=1e-3)
        np.testing.assert_allclose(fd.values, prob.bumps[j].sum(), rtol=1e-10)


def test_central_fd_second_order(burgers5):
    d = burgers5.default_design()
    e = np.array([1.0, 0.0])
    cs = complex_step_history(burgers5, d, EXACT, e).final
    hs = [4e-2, 2e-2, 1e-2]
    errs = [abs(converged_fd_sensitivity(central_fd_history(burgers5, d, EXACT, e, h=h), h) - cs) for h in hs]
    slopes = np.diff(np.log(errs)) / np.diff(np.log(hs))
    assert np.all(np.abs(slopes - 2.0) <= 0.3), slopes


def test_dense_one_step_identity_for_zero_residual():
    prob = ZeroResidual(n=5)
    d = prob.default_design()
    lin = dense_one_step_diff(prob, np.full(5, 0.7), d, 3.0, SolverConfig(linear=DIRECT))
    np.testing.assert_array_equal(lin.dNdu, np.eye(5))
    np.testing.assert_array_equal(lin.dNdD, np.zeros((5, prob.n_bumps)))


def test_dense_one_step_limited_size(nozzle):
    with pytest.raises(ValueError):
        dense_one_step_diff(nozzle, nozzle.initial_state(), nozzle.default_design(), 1.0, EXACT)


def test_dense_one_step_transpose_consistency(burgers5, rng):
    d = burgers5.default_design()
    traj = run_primal(burgers5, d, EXACT.model_copy(update={"max_outer_iterations": 2}))
    lin = dense_one_step_diff(burgers5, traj.states[1], d, traj.cfl_history[1], EXACT)
    x, y = rng.standard_normal(5), rng.standard_normal(5)
    assert abs(y @ (lin.dNdu @ x) - (lin.dNdu.T @ y) @ x) <= 1e-14 * np.linalg.norm(lin.dNdu) * 10


def test_converged_ptc_step_is_contractive(burgers5):
    d = burgers5.default_design()
    traj = run_primal(burgers5, d, EXACT)
    lin = dense_one_step_diff(burgers5, traj.final_state, d, traj.cfl_history[-1], EXACT)
    sigma = spectral_norm(lin.dNdu)
    assert sigma == pytest.approx(np.linalg.norm(lin.dNdu, 2), rel=1e-8)
    assert sigma < 1.0


def test_spectral_norm_examples():
    assert spectral_norm(np.diag([3.0, -5.0, 1.0])) == pytest.approx(5.0, rel=1e-12)
    assert spectral_norm(np.zeros((3, 3))) == 0.0
    assert spectral_norm(np.array([[0.0, 2.0], [0.0, 0.0]])) == pytest.approx(2.0, rel=1e-12)


def test_complex_step_history_replays_reference(burgers5):
    d = burgers5.default_design()
    ref = run_primal(burgers5, d, EXACT)
    hist = complex_step_history(burgers5, d, EXACT, [0.0, 1.0], reference=ref)
    assert len(hist.values) == ref.n + 1
    rerun = hist.extra["trajectory"]
    for a, b in zip(rerun.states, ref.states):
        np.testing.assert_allclose(np.real(a), b, rtol=0, atol=1e-12)
