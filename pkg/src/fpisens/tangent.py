"""Forward-mode linearization of a recorded primal trajectory.

For a PTC step ``P du = -R`` the increment derivative solves::

    P d(du) = -(J2 du/dD + R_x dx/dD) - ([dP/du . du/dD] du + [dP/dx . dx/dD] du)

which follows from differentiating ``P du = -R`` with the derivative of the
inverse written through ``P^{-1}``.  The linear solve is the primal's method at
the primal's tolerance, so the tangent inherits the same inexactness.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics.linsolve import LinearSolveConfig, direct_dense_solve, solve
from .problem import CS_STEP, DesignVector, FixedPointProblem, GeometryVector
from .solvers import StageRecord, Trajectory, ptc_matrices


@dataclass
class SensitivityHistory:
    """``values[k]`` is ``dL/dD`` along ``direction`` evaluated at iteration ``k`` (``k = 0..n``)."""

    method: str
    direction: np.ndarray
    values: np.ndarray
    residual_norms: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def final(self) -> float:
        return float(self.values[-1])


@dataclass
class TangentState:
    dudD: np.ndarray
    dLdD_history: list[float] = field(default_factory=list)


def tangent_ptc_step(
    problem: FixedPointProblem,
    traj: Trajectory,
    k: int,
    dudD,
    dg,
    linear: LinearSolveConfig | None = None,
):
    """``du/dD`` after entry ``k`` (1-based) given its value before it."""
    cfg = traj.config
    u = traj.states[k - 1]
    du = traj.increments[k - 1]
    cfl = traj.cfl_history[k - 1]
    g = problem.geometry(traj.design)
    order = cfg.jacobian_order
    rhs = -problem.jvp(u, g, dudD, 2) - problem.residual_geometry_dirderiv(u, g, dg, 2)
    rhs = rhs - problem.frechet_dPdu_times(u, g, cfl, dudD, du, order)
    if np.any(dg):
        rhs = rhs - problem.frechet_dPdx_times(u, g, cfl, dg, du, order)
    lin = linear or cfg.linear
    p, pmat = ptc_matrices(problem, u, g, cfl, cfg.model_copy(update={"linear": lin}))
    res = solve(p, rhs, lin, pmat=pmat)
    return dudD + res.solution, res


def tangent_rk_step(problem: FixedPointProblem, g: GeometryVector, rec: StageRecord, cfl: float, alphas, dudD, dg,
                    h: float = CS_STEP):
    """Stage-wise chain rule of the recomputed-gradient scheme at the recorded stage states.

    ``J(u) v + R_x dg`` is one complex-step evaluation of the residual with
    gradients recomputed from the perturbed state.
    """
    gc = g.perturbed(dg, h)
    d = dudD
    for l, a in enumerate(alphas):
        ul = rec.stages[l]
        jr = np.imag(problem.residual(ul + 1j * h * d, gc, 2)) / h
        d = dudD - (cfl * a) * rec.dt_over_vol * jr
    return d


def run_tangent(
    problem: FixedPointProblem,
    traj: Trajectory,
    direction,
    linear: LinearSolveConfig | None = None,
    keep_states: bool = False,
) -> SensitivityHistory:
    """Propagate ``du/dD`` from zero through every recorded iteration.

    With ``keep_states`` the full ``du^k/dD`` history is returned in
    ``extra["dudD_history"]``.
    """
    direction = np.asarray(direction, dtype=float)
    d = traj.design
    g = problem.geometry(d)
    dg = problem.geometry_direction(direction)
    dudD = np.zeros(problem.n_unknowns)
    values = [_dLdD(problem, traj.states[0], d, direction, dudD)]
    lin_iters = []
    states = [dudD] if keep_states else None
    for k in range(1, traj.n + 1):
        if traj.config.explicit:
            if not traj.stage_records:
                raise ValueError("explicit trajectory was recorded without stage states")
            dudD = tangent_rk_step(problem, g, traj.stage_records[k - 1], traj.cfl_history[k - 1],
                                   traj.config.alphas, dudD, dg)
        else:
            dudD, res = tangent_ptc_step(problem, traj, k, dudD, dg, linear)
            lin_iters.append(res.iterations_used)
        values.append(_dLdD(problem, traj.states[k], d, direction, dudD))
        if keep_states:
            states.append(dudD)
    extra = {"dudD": dudD, "linear_iterations": lin_iters}
    if keep_states:
        extra["dudD_history"] = np.array(states)
    return SensitivityHistory("tangent", direction, np.array(values), np.array(traj.residual_norm_history), extra)


def _dLdD(problem, u, d: DesignVector, direction, dudD) -> float:
    return problem.objective_dD(u, d, direction) + float(problem.objective_du(u, d) @ dudD)


def steady_tangent(problem: FixedPointProblem, u, d: DesignVector, direction):
    """Steady-state sensitivity ``L_D - L_u J2^{-1} R_x dx/dD`` by a direct solve at ``u``."""
    g = problem.geometry(d)
    dg = problem.geometry_direction(direction)
    j2 = problem.assemble_jacobian(u, g, 2)
    dudD = -direct_dense_solve(j2, problem.residual_geometry_dirderiv(u, g, dg, 2))
    return _dLdD(problem, u, d, np.asarray(direction, dtype=float), dudD), dudD


def write_history_csv(histories: list[SensitivityHistory], path) -> Path:
    """Columns: iteration, residual_norm, then one ``dLdD_<method>_dv<j>`` column per history."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = max((len(h.values) for h in histories), default=0)
    res = histories[0].residual_norms if histories else np.array([])
    header = ["iteration", "residual_norm"] + [f"dLdD_{h.method}_{h.extra.get('label', i)}" for i, h in enumerate(histories)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(n):
            row = [k, repr(float(res[k])) if k < len(res) else ""]
            row += [repr(float(h.values[k])) if k < len(h.values) else "" for h in histories]
            w.writerow(row)
    return path
