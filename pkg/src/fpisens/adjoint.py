"""Reverse sweep over a recorded trajectory.

PTC steps use the secondary adjoint ``psi``::

    Lambda^n = -L_u(u^n)^T
    P^T psi^k = Lambda^k
    Lambda^{k-1} = Lambda^k - (J2 + M_k)^T psi^k,    M_k = dP/du . du^k
    dL/dD += psi^k^T (R_x dx/dD + [dP/dx . dx/dD] du^k)

``M_k`` is assembled as ``Im[J_P(u + i h du^k)] / h``, which equals the
matrix ``w -> [dP/du . w] du^k`` by symmetry of second derivatives.  The
design terms are forward Frechet products contracted with ``psi``.

Explicit multistage steps are reversed stage by stage (multiplier sign
``lambda = -Lambda``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics.linsolve import (
    LinearSolveConfig,
    direct_dense_solve,
    gmres_solve,
    is_linear_in_rhs,
    make_preconditioner,
    solve_dual,
)
from .problem import CS_STEP, DesignVector, FixedPointProblem, GeometryVector
from .solvers import StageRecord, Trajectory, ptc_matrices


@dataclass
class AdjointState:
    lam: np.ndarray
    psi: np.ndarray | None
    partial_sensitivity: np.ndarray


@dataclass
class AdjointResult:
    sensitivity: np.ndarray  # one entry per direction
    directions: np.ndarray
    lambda_norms: list[float] = field(default_factory=list)  # index k = n..1 stored in iteration order
    psi_norms: list[float] = field(default_factory=list)
    psiR_products: list[float] = field(default_factory=list)
    partial_history: list[np.ndarray] = field(default_factory=list)
    linear_records: list[tuple[float, int, str]] = field(default_factory=list)


def adjoint_init(problem: FixedPointProblem, traj: Trajectory, directions, k_stop: int | None = None) -> AdjointState:
    k = traj.n if k_stop is None else k_stop
    u = traj.states[k]
    d = traj.design
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    lam = -problem.objective_du(u, d)
    sens = np.array([problem.objective_dD(u, d, e) for e in dirs])
    return AdjointState(lam, None, sens)


def _step_data(problem: FixedPointProblem, traj: Trajectory, k: int):
    cfg = traj.config
    u = traj.states[k - 1]
    du = traj.increments[k - 1]
    cfl = traj.cfl_history[k - 1]
    g = problem.geometry(traj.design)
    return u, du, cfl, g, cfg.jacobian_order


def _design_rows(problem, u, du, g, cfl, order, dgs) -> np.ndarray:
    """Rows ``R_x dg_j + [dP/dx . dg_j] du`` for each geometry direction."""
    rows = []
    for dg in dgs:
        b = problem.residual_geometry_dirderiv(u, g, dg, 2)
        if np.any(dg):
            b = b + problem.frechet_dPdx_times(u, g, cfl, dg, du, order)
        rows.append(b)
    return np.array(rows)


@dataclass
class ReverseStepOps:
    """Everything the reverse PTC step ``k`` needs that does not depend on the multiplier."""

    p: object
    pmat: object
    precond: object  # transposed right preconditioner for GMRES, or None
    opT: np.ndarray  # (J2 + M)^T, dense
    rows: np.ndarray  # design rows, one per direction


def reverse_step_ops(problem: FixedPointProblem, traj: Trajectory, k: int, dgs, linear: LinearSolveConfig) -> ReverseStepOps:
    u, du, cfl, g, order = _step_data(problem, traj, k)
    p, pmat = ptc_matrices(problem, u, g, cfl, traj.config.model_copy(update={"linear": linear}))
    precond = make_preconditioner(p, linear, pmat, transpose=True, reuse=True) if linear.method == "gmres" else None
    op = problem.assemble_jacobian(u, g, 2).to_dense() + problem.frechet_dPdu_matrix(u, g, du, order).to_dense()
    return ReverseStepOps(p, pmat, precond, op.T, _design_rows(problem, u, du, g, cfl, order, dgs))


def dual_solve(ops: ReverseStepOps, lam, linear: LinearSolveConfig):
    """``P^T psi = Lambda`` with the dual of the primal linear method."""
    if linear.method == "gmres":
        return gmres_solve(ops.p.transpose(), lam, linear, ops.precond)
    return solve_dual(ops.p, lam, linear)


def adjoint_step(
    problem: FixedPointProblem,
    traj: Trajectory,
    k: int,
    state: AdjointState,
    directions,
    linear: LinearSolveConfig | None = None,
    ops: ReverseStepOps | None = None,
):
    """Reverse PTC entry ``k``; returns the new state and the dual linear result."""
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    lin = linear or traj.config.linear
    if ops is None:
        ops = reverse_step_ops(problem, traj, k, [problem.geometry_direction(e) for e in dirs], lin)
    res = dual_solve(ops, state.lam, lin)
    psi = res.solution
    lam = state.lam - ops.opT @ psi
    sens = state.partial_sensitivity + ops.rows @ psi
    return AdjointState(lam, psi, sens), res


def run_adjoint(
    problem: FixedPointProblem,
    traj: Trajectory,
    directions,
    k_stop: int | None = None,
    linear: LinearSolveConfig | None = None,
    keep_history: bool = False,
    ops_cache: dict | None = None,
) -> AdjointResult:
    """Full reverse sweep from ``k_stop`` (default ``n``) down to 1.

    ``ops_cache`` maps step index to :class:`ReverseStepOps` and is filled on
    demand, so several sweeps over one trajectory share the assembly work.
    """
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    k_stop = traj.n if k_stop is None else k_stop
    if not 0 <= k_stop <= traj.n:
        raise ValueError(f"k_stop must lie in [0, {traj.n}]")
    if traj.config.explicit:
        return _run_adjoint_explicit(problem, traj, dirs, k_stop, keep_history)
    lin = linear or traj.config.linear
    dgs = [problem.geometry_direction(e) for e in dirs]
    cache = {} if ops_cache is None else ops_cache
    state = adjoint_init(problem, traj, dirs, k_stop)
    out = AdjointResult(state.partial_sensitivity.copy(), dirs)
    lam_n, psi_n, prod, part, recs = [], [], [], [], []
    for k in range(k_stop, 0, -1):
        if k not in cache:
            cache[k] = reverse_step_ops(problem, traj, k, dgs, lin)
        state, res = adjoint_step(problem, traj, k, state, dirs, lin, cache[k])
        lam_n.append(float(np.linalg.norm(state.lam)))
        psi_n.append(float(np.linalg.norm(state.psi)))
        prod.append(psi_n[-1] * float(traj.residual_norm_history[k - 1]))
        if keep_history:
            part.append(state.partial_sensitivity.copy())
        recs.append((res.achieved_rel_residual, res.iterations_used, res.status))
    out.sensitivity = state.partial_sensitivity
    out.lambda_norms = lam_n[::-1]
    out.psi_norms = psi_n[::-1]
    out.psiR_products = prod[::-1]
    out.partial_history = part[::-1]
    out.linear_records = recs[::-1]
    return out


def run_adjoint_truncated(problem, traj: Trajectory, k_stop: int, directions, linear=None) -> np.ndarray:
    return run_adjoint(problem, traj, directions, k_stop, linear).sensitivity


def run_adjoint_all_truncations(
    problem: FixedPointProblem,
    traj: Trajectory,
    directions,
    k_stops=None,
    linear: LinearSolveConfig | None = None,
) -> dict[int, np.ndarray]:
    """Sensitivity of every truncated process ``k_stop`` in ``k_stops`` (default ``0..n``).

    For linear solvers that are fixed linear maps of the right-hand side
    (fixed sweeps, direct) all truncations share one backward sweep with a
    multiplier matrix: column ``j`` is injected at ``k = k_stop_j``.  Otherwise
    each truncation is an independent sweep, with the per-step operators
    assembled once and shared.
    """
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    k_stops = list(range(traj.n + 1)) if k_stops is None else sorted(set(int(k) for k in k_stops))
    lin = linear or traj.config.linear
    if traj.config.explicit or not is_linear_in_rhs(lin):
        cache: dict = {}
        return {k: run_adjoint(problem, traj, dirs, k, lin, ops_cache=cache).sensitivity for k in k_stops}
    d = traj.design
    nu = problem.n_unknowns
    col = {k: j for j, k in enumerate(k_stops)}
    lam = np.zeros((nu, len(k_stops)))
    sens = np.zeros((len(dirs), len(k_stops)))
    dgs = [problem.geometry_direction(e) for e in dirs]
    for k in range(traj.n, -1, -1):
        if k in col:
            j = col[k]
            u = traj.states[k]
            lam[:, j] = -problem.objective_du(u, d)
            sens[:, j] = [problem.objective_dD(u, d, e) for e in dirs]
        if k == 0:
            break
        active = [col[s] for s in k_stops if s >= k]
        if not active:
            continue
        ops = reverse_step_ops(problem, traj, k, dgs, lin)
        psi = solve_dual(ops.p, lam[:, active], lin).solution  # fixed sweeps or direct: no preconditioner
        lam[:, active] -= ops.opT @ psi
        sens[:, active] += ops.rows @ psi
    return {k: sens[:, col[k]] for k in k_stops}


# ----------------------------------------------------------------------------
# explicit schemes


def adjoint_rk_step(problem: FixedPointProblem, g: GeometryVector, rec: StageRecord, cfl: float, alphas, lam_bar,
                    dgs, h: float = CS_STEP):
    """Transpose of :func:`~fpisens.tangent.tangent_rk_step`.

    ``lam_bar`` is the multiplier of the step output in the ``+L_u`` convention.
    Returns the multiplier of the step input and the design contributions.
    """
    acc = np.zeros_like(lam_bar)
    sens = np.zeros(len(dgs))
    gbar = lam_bar
    for l in range(len(alphas), 0, -1):
        a = alphas[l - 1]
        ul = rec.stages[l - 1]
        t = (cfl * a) * rec.dt_over_vol * gbar
        acc = acc + gbar
        for j, dg in enumerate(dgs):
            sens[j] -= t @ problem.residual_geometry_dirderiv(ul, g, dg, 2, h=h)
        jt = problem.assemble_jacobian(ul, g, 2).rmatvec(t)
        if l > 1:
            gbar = -jt
        else:
            acc = acc - jt
    return acc, sens


def _run_adjoint_explicit(problem, traj: Trajectory, dirs, k_stop: int, keep_history: bool) -> AdjointResult:
    if not traj.stage_records:
        raise ValueError("explicit trajectory was recorded without stage states")
    g = problem.geometry(traj.design)
    state = adjoint_init(problem, traj, dirs, k_stop)
    lam_bar = -state.lam
    sens = state.partial_sensitivity.copy()
    dgs = [problem.geometry_direction(e) for e in dirs]
    out = AdjointResult(sens, dirs)
    lam_n, part = [], []
    for k in range(k_stop, 0, -1):
        lam_bar, contrib = adjoint_rk_step(problem, g, traj.stage_records[k - 1], traj.cfl_history[k - 1],
                                           traj.config.alphas, lam_bar, dgs)
        sens = sens + contrib
        lam_n.append(float(np.linalg.norm(lam_bar)))
        if keep_history:
            part.append(sens.copy())
    out.sensitivity = sens
    out.lambda_norms = lam_n[::-1]
    out.partial_history = part[::-1]
    return out


# ----------------------------------------------------------------------------
# steady reference and output


def steady_adjoint(problem: FixedPointProblem, u, d: DesignVector, directions) -> np.ndarray:
    """``L_D + Lambda^T R_x dx/dD`` with ``J2^T Lambda = -L_u^T`` at ``u``."""
    g = problem.geometry(d)
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    lam = direct_dense_solve(problem.assemble_jacobian(u, g, 2), -problem.objective_du(u, d), trans=True)
    return np.array([
        problem.objective_dD(u, d, e) + lam @ problem.residual_geometry_dirderiv(u, g, problem.geometry_direction(e), 2)
        for e in dirs
    ])


def write_adjoint_csv(res: AdjointResult, path) -> Path:
    """Columns: k, lambda_norm, psi_norm, psiR_product, then partial sensitivity per direction."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nd = len(res.directions)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "lambda_norm", "psi_norm", "psiR_product"] + [f"partial_dv{j + 1}" for j in range(nd)])
        for i, ln in enumerate(res.lambda_norms):
            row = [i + 1, repr(ln)]
            row.append(repr(res.psi_norms[i]) if i < len(res.psi_norms) else "")
            row.append(repr(res.psiR_products[i]) if i < len(res.psiR_products) else "")
            if i < len(res.partial_history):
                row += [repr(float(v)) for v in res.partial_history[i]]
            w.writerow(row)
    return path
