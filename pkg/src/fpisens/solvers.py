"""Primal fixed-point iterations: explicit multistage smoothing and PTC quasi-Newton.

Every routine works for real and complex-step perturbed states.  Control flow
(step acceptance, CFL, termination) only ever looks at real parts, and a run
may be pinned to a recorded reference trajectory so that a complex-step rerun
follows exactly the same iteration sequence.

Convention: ``u^k = u^{k-1} + du^k`` with ``P du^k = -R(u^{k-1})``; explicit
stages use ``u^l = u^0 - cfl alpha_l (dt/vol) R(u^{l-1})``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .numerics.linsolve import LinearSolveConfig, LinearSolveResult, solve
from .problem import DesignVector, FixedPointProblem, GeometryVector, NonPhysicalStateError

log = logging.getLogger(__name__)

RK5_ALPHA = (1.0 / 4.0, 1.0 / 6.0, 3.0 / 8.0, 1.0 / 2.0, 1.0)
EULER_ALPHA = (1.0,)

Scheme = Literal["forward_euler", "rk5_frozen_gradients", "ptc_newton"]


class SolverError(RuntimeError):
    pass


class DivergenceError(SolverError):
    pass


class TrajectoryMismatchError(SolverError):
    """A pinned rerun left the recorded iteration sequence."""


class SolverConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    scheme: Scheme = "ptc_newton"
    jacobian_order: Literal[1, 2] = 2
    cfl0: float = Field(1.0, gt=0.0)
    cfl_ramp_beta: float = Field(1.5, ge=1.0)
    cfl_max: float = Field(1e6, gt=0.0)
    linear: LinearSolveConfig = LinearSolveConfig()
    max_outer_iterations: int = Field(200, ge=0)
    residual_reduction_target: float = Field(1e-12, gt=0.0, lt=1.0)
    max_step_rejections: int = Field(30, ge=0)
    divergence_factor: float = Field(1e6, gt=1.0)

    @model_validator(mode="after")
    def _check(self):
        if self.cfl_max < self.cfl0:
            raise ValueError("cfl_max must be >= cfl0")
        return self

    @property
    def explicit(self) -> bool:
        return self.scheme != "ptc_newton"

    @property
    def alphas(self) -> tuple[float, ...]:
        return RK5_ALPHA if self.scheme == "rk5_frozen_gradients" else EULER_ALPHA


@dataclass
class LinearRecord:
    achieved_rel_residual: float
    iterations_used: int
    status: str


@dataclass
class StageRecord:
    """One explicit iteration: stage states ``u^{m,0..s}``, frozen slopes and ``dt/vol``."""

    stages: list[np.ndarray]
    slopes: np.ndarray
    dt_over_vol: np.ndarray


@dataclass
class Trajectory:
    """Recorded primal history; entry ``k`` (1-based) maps ``states[k-1]`` to ``states[k]``."""

    scheme: str
    config: SolverConfig
    design: DesignVector
    states: list[np.ndarray] = field(default_factory=list)
    increments: list[np.ndarray] = field(default_factory=list)
    cfl_history: list[float] = field(default_factory=list)
    rejections: list[int] = field(default_factory=list)
    residual_norm_history: list[float] = field(default_factory=list)
    linear_solve_records: list[LinearRecord] = field(default_factory=list)
    stage_records: list[StageRecord] = field(default_factory=list)
    converged: bool = False

    @property
    def n(self) -> int:
        return len(self.states) - 1

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def update_cfl(cfl: float, cfg: SolverConfig) -> float:
    return min(cfg.cfl_ramp_beta * cfl, cfg.cfl_max)


# ----------------------------------------------------------------------------
# single steps


@dataclass
class PTCStep:
    u_next: np.ndarray
    du: np.ndarray
    linear: LinearSolveResult
    cfl: float


def ptc_matrices(problem: FixedPointProblem, u, g: GeometryVector, cfl: float, cfg: SolverConfig):
    """The step matrix ``P`` and, if the linear config asks for it, the first-order preconditioning matrix."""
    p = problem.precondition_matrix(u, g, cfl, cfg.jacobian_order)
    pmat = None
    if cfg.linear.method == "gmres" and cfg.linear.preconditioner == "first_order_lu":
        pmat = p if cfg.jacobian_order == 1 else problem.precondition_matrix(u, g, cfl, 1)
    return p, pmat


def ptc_step(
    problem: FixedPointProblem,
    u,
    g: GeometryVector,
    cfl: float,
    cfg: SolverConfig,
    fixed_iterations: int | None = None,
) -> PTCStep:
    """Solve ``P du = -R(u)`` once; no positivity handling here."""
    p, pmat = ptc_matrices(problem, u, g, cfl, cfg)
    r = problem.residual(u, g, 2)
    res = solve(p, -r, cfg.linear, fixed_iterations, pmat)
    return PTCStep(u + res.solution, res.solution, res, cfl)


def explicit_step(problem: FixedPointProblem, u, g: GeometryVector, cfl: float, alphas=RK5_ALPHA):
    """Multistage step with slopes frozen at the base stage.  Returns ``(u_next, StageRecord)``."""
    slopes = problem.gradients(u)
    coef = problem.pseudo_time_shift(u, g, 1.0) ** -1  # dt/vol from real parts
    coef = np.repeat(coef, problem.nvar)
    stages = [u]
    for l, a in enumerate(alphas):
        r = problem.residual(stages[-1], g, 2, slopes)
        ul = u - (cfl * a) * coef * r
        try:
            problem.check_physical(np.real(ul))
            problem.residual(np.real(ul), g, 2, np.real(slopes))
        except NonPhysicalStateError as exc:
            raise NonPhysicalStateError(f"stage {l + 1}: {exc}", exc.cell) from exc
        stages.append(ul)
    return stages[-1], StageRecord(stages, slopes, coef)


def rk5_step(problem: FixedPointProblem, u, g: GeometryVector, cfl: float):
    return explicit_step(problem, u, g, cfl, RK5_ALPHA)


# ----------------------------------------------------------------------------
# driver


def run_primal(
    problem: FixedPointProblem,
    d: DesignVector,
    cfg: SolverConfig,
    u0=None,
    reference: Trajectory | None = None,
    keep_stages: bool = True,
) -> Trajectory:
    """Iterate to ``||R|| <= target ||R^0||`` or the iteration cap.

    With ``reference`` the run replays its step count, accepted CFL values,
    rejection counts and GMRES depths; a real-part state that drifts from the
    reference by more than 1e-6 relative raises :class:`TrajectoryMismatchError`.
    """
    g = problem.geometry(d)
    u = np.array(problem.initial_state(d) if u0 is None else u0)
    if np.iscomplexobj(d.amplitudes):
        u = u.astype(complex)
    traj = Trajectory(cfg.scheme, cfg, d)
    traj.states.append(u)
    r0 = problem.residual_norm(u, g)
    traj.residual_norm_history.append(r0)
    target = cfg.residual_reduction_target * r0
    cfl = cfg.cfl0
    k = 0
    while True:
        rk = traj.residual_norm_history[-1]
        if reference is not None:
            if k >= reference.n:
                break
        elif rk <= target or k >= cfg.max_outer_iterations:
            break
        if rk > cfg.divergence_factor * max(r0, np.finfo(float).tiny):
            raise DivergenceError(f"residual grew from {r0:.3e} to {rk:.3e} at iteration {k}")
        k += 1
        if reference is not None:
            cfl = reference.cfl_history[k - 1]
            nrej = reference.rejections[k - 1]
            cfl0_step = cfl * 2.0**nrej
        else:
            cfl0_step = cfl
        u_next, nrej, cfl, rec, extra = _advance(problem, u, g, cfl0_step, cfg, reference, k)
        u = u_next
        traj.states.append(u)
        traj.cfl_history.append(cfl)
        traj.rejections.append(nrej)
        if cfg.explicit:
            if keep_stages:
                traj.stage_records.append(extra)
            traj.increments.append(u - traj.states[-2])
        else:
            traj.increments.append(extra)
            traj.linear_solve_records.append(rec)
        traj.residual_norm_history.append(problem.residual_norm(u, g))
        if reference is not None:
            _check_against(reference, k, u)
        cfl = update_cfl(cfl, cfg)
    traj.converged = traj.residual_norm_history[-1] <= target
    log.info("%s: %d iterations, residual %.3e -> %.3e", cfg.scheme, k, r0, traj.residual_norm_history[-1])
    return traj


def _advance(problem, u, g, cfl, cfg: SolverConfig, reference: Trajectory | None, k: int):
    """One accepted step with CFL halving on positivity failure."""
    pinned_rej = reference.rejections[k - 1] if reference is not None else None
    nrej = 0
    while True:
        must_reject = pinned_rej is not None and nrej < pinned_rej
        try:
            if cfg.explicit:
                u_next, rec = explicit_step(problem, u, g, cfl, cfg.alphas)
                out = (u_next, nrej, cfl, None, rec)
            else:
                fixed = None
                if reference is not None and not must_reject and cfg.linear.method == "gmres":
                    fixed = reference.linear_solve_records[k - 1].iterations_used
                step = ptc_step(problem, u, g, cfl, cfg, fixed)
                problem.check_physical(np.real(step.u_next))
                problem.residual(np.real(step.u_next), g, 2)  # reconstructed face states must be valid too
                lin = step.linear
                rec = LinearRecord(lin.achieved_rel_residual, lin.iterations_used, lin.status)
                if not lin.converged:
                    log.debug("iteration %d: linear solve %s at %.2e", k, lin.status, lin.achieved_rel_residual)
                out = (step.u_next, nrej, cfl, rec, step.du)
            if not must_reject:
                return out
        except (NonPhysicalStateError, np.linalg.LinAlgError, ValueError) as exc:
            if pinned_rej is not None and nrej >= pinned_rej:
                raise TrajectoryMismatchError(f"iteration {k}: step rejected but the reference accepted it") from exc
            if nrej >= cfg.max_step_rejections:
                raise SolverError(f"iteration {k}: {nrej} rejections, last error: {exc}") from exc
        nrej += 1
        cfl = 0.5 * cfl


def _check_against(reference: Trajectory, k: int, u) -> None:
    ref = reference.states[k]
    scale = max(float(np.max(np.abs(ref))), 1.0)
    dev = float(np.max(np.abs(np.real(u) - ref))) / scale
    if not dev <= 1e-6:
        raise TrajectoryMismatchError(f"iteration {k}: real part deviates from reference by {dev:.2e}")


# ----------------------------------------------------------------------------
# CSV bundle


def write_trajectory_csv(traj: Trajectory, out_dir) -> Path:
    """One CSV per field: states, increments, cfl/rejections, residual norms, linear records."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "states.csv", ["k"] + [f"u{i}" for i in range(traj.states[0].size)],
                [[k, *np.real(s)] for k, s in enumerate(traj.states)])
    width = traj.states[0].size
    _write_rows(out / "increments.csv", ["k"] + [f"du{i}" for i in range(width)],
                [[k + 1, *np.real(s)] for k, s in enumerate(traj.increments)])
    _write_rows(out / "steps.csv", ["k", "cfl", "rejections"],
                [[k + 1, c, r] for k, (c, r) in enumerate(zip(traj.cfl_history, traj.rejections))])
    _write_rows(out / "residuals.csv", ["k", "residual_norm"],
                [[k, r] for k, r in enumerate(traj.residual_norm_history)])
    _write_rows(out / "linear.csv", ["k", "achieved_rel_residual", "iterations_used", "status"],
                [[k + 1, r.achieved_rel_residual, r.iterations_used, r.status]
                 for k, r in enumerate(traj.linear_solve_records)])
    return out


def read_trajectory_csv(in_dir, config: SolverConfig, design: DesignVector) -> Trajectory:
    """Rebuild a real trajectory written by :func:`write_trajectory_csv` (stage records are not stored)."""
    src = Path(in_dir)
    traj = Trajectory(config.scheme, config, design)
    traj.states = [np.array(row[1:], dtype=float) for row in _read_rows(src / "states.csv")]
    traj.increments = [np.array(row[1:], dtype=float) for row in _read_rows(src / "increments.csv")]
    for row in _read_rows(src / "steps.csv"):
        traj.cfl_history.append(float(row[1]))
        traj.rejections.append(int(row[2]))
    traj.residual_norm_history = [float(row[1]) for row in _read_rows(src / "residuals.csv")]
    traj.linear_solve_records = [
        LinearRecord(float(row[1]), int(row[2]), row[3]) for row in _read_rows(src / "linear.csv")
    ]
    target = config.residual_reduction_target * traj.residual_norm_history[0]
    traj.converged = traj.residual_norm_history[-1] <= target
    return traj


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _read_rows(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[1:]
