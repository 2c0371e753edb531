import numpy as np
import pytest
from _problems import LinearAdvection, ScalarDecay

from fpisens.harness.config import default_solver
from fpisens.harness.experiments import contraction_ratio, convergence_order
from fpisens.numerics import LinearSolveConfig
from fpisens.solvers import (
    EULER_ALPHA,
    RK5_ALPHA,
    DivergenceError,
    SolverConfig,
    explicit_step,
    ptc_step,
    read_trajectory_csv,
    rk5_step,
    run_primal,
    update_cfl,
    write_trajectory_csv,
)
from fpisens.testbeds import BurgersConfig, BurgersProblem, NozzleConfig, NozzleProblem

DIRECT = LinearSolveConfig(method="direct_dense")

# iteration count of the exact-Newton nozzle run to 1e-12 reduction, recorded after the first verified run
NOZZLE_EXACT_ITERATIONS = 8


def test_solver_config_invariants():
    with pytest.raises(ValueError):
        SolverConfig(cfl0=10.0, cfl_max=1.0)
    with pytest.raises(ValueError):
        SolverConfig(cfl_ramp_beta=0.5)
    with pytest.raises(ValueError):
        SolverConfig(cfl0=0.0)


def test_rk_coefficients():
    assert RK5_ALPHA == (1 / 4, 1 / 6, 3 / 8, 1 / 2, 1.0)
    assert EULER_ALPHA == (1.0,)


# ---- update_cfl -------------------------------------------------------------------------


def test_update_cfl_examples():
    cfg = SolverConfig(cfl_ramp_beta=2.0, cfl_max=100.0)
    assert update_cfl(1.0, cfg) == 2.0
    assert update_cfl(100.0, cfg) == 100.0


def test_update_cfl_reaches_cap_in_closed_form_steps():
    cfg = SolverConfig(cfl0=1.0, cfl_ramp_beta=2.0, cfl_max=1e6)
    cfl, steps = 1.0, 0
    while cfl < 1e6:
        cfl = update_cfl(cfl, cfg)
        steps += 1
    assert steps == int(np.ceil(np.log2(1e6))) == 20
    assert cfl == 1e6


# ---- ptc_step ---------------------------------------------------------------------------


def test_ptc_step_at_fixed_point():
    prob = LinearAdvection()
    u = np.ones(6)
    g = prob.geometry(prob.default_design())
    assert np.array_equal(prob.residual(u, g), np.zeros(6))
    step = ptc_step(prob, u, g, 5.0, SolverConfig(linear=DIRECT))
    assert np.array_equal(step.du, np.zeros(6))
    assert np.array_equal(step.u_next, u)


def test_ptc_step_linear_problem_one_newton_step(rng):
    prob = LinearAdvection()
    g = prob.geometry(prob.default_design())
    step = ptc_step(prob, rng.standard_normal(6), g, 1e15, SolverConfig(cfl0=1e15, cfl_max=1e15, linear=DIRECT))
    np.testing.assert_allclose(step.u_next, np.ones(6), rtol=0, atol=1e-12)


def test_ptc_quadratic_convergence_on_burgers(burgers5):
    cfg = SolverConfig(cfl0=100.0, cfl_ramp_beta=100.0, cfl_max=1e14, linear=LinearSolveConfig(rel_tolerance=1e-12))
    traj = run_primal(burgers5, burgers5.default_design(), cfg)
    r = np.array(traj.residual_norm_history) / traj.residual_norm_history[0]
    pairs = [(a, b) for a, b in zip(r[:-1], r[1:]) if a <= 1e-2 and b >= 1e-14]
    assert len(pairs) >= 1
    c = max(b / a**2 for a, b in pairs)
    print(f"measured C = {c:.3g}")
    assert c <= 1.0


# ---- explicit steps ----------------------------------------------------------------------


def test_rk5_zero_residual_is_fixed_point():
    prob = LinearAdvection()
    u = np.ones(6)
    u_next, rec = rk5_step(prob, u, prob.geometry(prob.default_design()), 0.5)
    assert np.array_equal(u_next, u)
    assert len(rec.stages) == 6


@pytest.mark.parametrize("cfl", [0.3, 1.0, 1.7])
def test_rk5_amplification_factor(cfl):
    prob = ScalarDecay(lam=2.0)
    g = prob.geometry(prob.default_design())
    u_next, _ = rk5_step(prob, np.ones(1), g, cfl)
    z = -cfl * 2.0  # dt = vol = 1
    amp = 1.0
    for a in RK5_ALPHA:
        amp = 1.0 + a * z * amp
    # expanded: the coefficient of z^j is the product of the last j alphas
    poly = 1 + z + z**2 / 2 + 3 * z**3 / 16 + z**4 / 32 + z**5 / 128
    assert amp == pytest.approx(poly, rel=1e-14)
    assert u_next[0] == pytest.approx(poly, rel=1e-14)


def test_frozen_and_recomputed_gradients_on_zero_slope_state(rng):
    prob = NozzleProblem(NozzleConfig(cells=12, initial_state="uniform"))
    u = prob.initial_state()
    g = prob.geometry(prob.default_design())
    slopes = prob.gradients(u)
    assert np.max(np.abs(slopes)) == 0.0
    np.testing.assert_array_equal(prob.residual(u, g, 2, slopes), prob.residual(u, g, 2))
    # a single stage only sees the base state, so frozen and recomputed steps coincide
    u1, _ = explicit_step(prob, u, g, 0.5, EULER_ALPHA)
    coef = np.repeat(1.0 / prob.pseudo_time_shift(u, g, 1.0), 3)
    np.testing.assert_array_equal(u1, u - 0.5 * coef * prob.residual(u, g, 2))


def test_explicit_stage_record():
    prob = BurgersProblem(BurgersConfig(cells=8))
    u = prob.initial_state()
    g = prob.geometry(prob.default_design())
    u_next, rec = rk5_step(prob, u, g, 0.5)
    assert len(rec.stages) == 6 and np.array_equal(rec.stages[0], u) and np.array_equal(rec.stages[-1], u_next)
    np.testing.assert_array_equal(rec.slopes, prob.gradients(u))


# ---- run_primal ---------------------------------------------------------------------------


def test_run_primal_from_converged_state():
    prob = LinearAdvection()
    fixed = run_primal(prob, prob.default_design(), SolverConfig(linear=DIRECT), u0=np.ones(6))
    assert fixed.n == 0 and fixed.converged
    assert fixed.residual_norm_history == [0.0]


def test_trajectory_invariants(burgers):
    cfg = SolverConfig(cfl0=5.0, cfl_ramp_beta=2.0, linear=LinearSolveConfig(rel_tolerance=1e-8))
    traj = run_primal(burgers, burgers.default_design(), cfg)
    g = burgers.geometry(burgers.default_design())
    assert traj.converged
    for k in range(traj.n):
        np.testing.assert_allclose(traj.states[k + 1], traj.states[k] + traj.increments[k], rtol=0, atol=1e-15)
    for k, s in enumerate(traj.states):
        assert traj.residual_norm_history[k] == burgers.residual_norm(s, g)
    assert len(traj.cfl_history) == len(traj.linear_solve_records) == traj.n


def test_nozzle_exact_newton_baseline(nozzle):
    cfg = default_solver("exact_newton_sweep")
    cfg = cfg.model_copy(update={"linear": cfg.linear.model_copy(update={"rel_tolerance": 1e-12})})
    traj = run_primal(nozzle, nozzle.default_design(), cfg)
    r = np.array(traj.residual_norm_history)
    assert traj.converged and r[-1] <= 1e-12 * r[0]
    assert traj.n == NOZZLE_EXACT_ITERATIONS
    assert convergence_order(r) >= 1.7


def test_nozzle_first_order_jacobian_converges_linearly(nozzle):
    traj = run_primal(nozzle, nozzle.default_design(), default_solver("inexact_newton_sweep"))
    r = np.array(traj.residual_norm_history)
    ratios = r[-11:] / r[-12:-1]
    assert traj.converged
    assert np.all((ratios > 0) & (ratios < 1))
    assert np.ptp(ratios) < 0.1
    assert 0.9 <= convergence_order(r) <= 1.3
    assert 0 < contraction_ratio(r) < 1


def test_forward_euler_burgers_monotone_tail(burgers):
    cfg = SolverConfig(scheme="forward_euler", cfl0=0.5, cfl_ramp_beta=1.0, cfl_max=0.5,
                       max_outer_iterations=5000, residual_reduction_target=1e-8)
    traj = run_primal(burgers, burgers.default_design(), cfg)
    r = np.array(traj.residual_norm_history)
    assert traj.converged
    tail = r[len(r) // 5:]
    assert np.all(np.diff(tail) <= 0)


def test_divergence_aborts():
    prob = ScalarDecay(lam=2.0)
    cfg = SolverConfig(scheme="forward_euler", cfl0=3.0, cfl_ramp_beta=1.0, cfl_max=3.0, max_outer_iterations=100)
    with pytest.raises(DivergenceError):
        run_primal(prob, prob.default_design(), cfg)


def test_trajectory_csv_round_trip(burgers5, tmp_path):
    cfg = SolverConfig(cfl0=10.0, cfl_ramp_beta=10.0, cfl_max=1e12, linear=DIRECT)
    traj = run_primal(burgers5, burgers5.default_design(), cfg)
    write_trajectory_csv(traj, tmp_path)
    back = read_trajectory_csv(tmp_path, cfg, burgers5.default_design())
    assert back.n == traj.n and back.converged == traj.converged
    for a, b in zip(back.states, traj.states):
        assert np.array_equal(a, b)
    assert back.cfl_history == traj.cfl_history
    assert back.residual_norm_history == traj.residual_norm_history
