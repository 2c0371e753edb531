"""Reference sensitivities: whole-process complex step, central differences and
dense differentiation of a single iteration."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .problem import CS_STEP, DesignVector, FixedPointProblem
from .solvers import SolverConfig, Trajectory, explicit_step, ptc_step, run_primal
from .tangent import SensitivityHistory


class OracleConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    method: Literal["complex_step", "central_fd"] = "complex_step"
    step: float | None = Field(None, gt=0.0)

    @property
    def resolved_step(self) -> float:
        if self.step is not None:
            return self.step
        return CS_STEP if self.method == "complex_step" else 1e-6


def complex_step_history(
    problem: FixedPointProblem,
    d: DesignVector,
    cfg: SolverConfig,
    direction,
    h: float = CS_STEP,
    reference: Trajectory | None = None,
    u0=None,
) -> SensitivityHistory:
    """Rerun the whole primal at ``D + i h dir``; ``values[k] = Im L(u^k) / h``.

    The rerun replays the reference trajectory's control flow (a real run is
    made first when none is given).  Real parts are checked against it at
    every step.
    """
    if h > 1e-20:
        raise ValueError("complex step must be <= 1e-20 so that h^2 vanishes against the solution scale")
    direction = np.asarray(direction, dtype=float)
    if reference is None:
        reference = run_primal(problem, d, cfg, u0=u0)
    dc = d.perturbed(direction, h)
    traj = run_primal(problem, dc, cfg, u0=u0, reference=reference, keep_stages=False)
    values = np.array([np.imag(problem.objective(u, dc)) / h for u in traj.states])
    return SensitivityHistory("complex", direction, values, np.array(reference.residual_norm_history),
                              {"trajectory": traj})


def central_fd_history(
    problem: FixedPointProblem,
    d: DesignVector,
    cfg: SolverConfig,
    direction,
    h: float = 1e-6,
    u0=None,
) -> SensitivityHistory:
    """``(L(u^k_+) - L(u^k_-)) / 2h`` over the common prefix of two independent real runs."""
    direction = np.asarray(direction, dtype=float)
    dp = DesignVector(d.amplitudes + h * direction)
    dm = DesignVector(d.amplitudes - h * direction)
    tp = run_primal(problem, dp, cfg, u0=u0, keep_stages=False)
    tm = run_primal(problem, dm, cfg, u0=u0, keep_stages=False)
    n = min(tp.n, tm.n)
    values = np.array([
        (problem.objective(tp.states[k], dp) - problem.objective(tm.states[k], dm)) / (2.0 * h) for k in range(n + 1)
    ])
    extra = {"n_plus": tp.n, "n_minus": tm.n, "final_plus": problem.objective(tp.final_state, dp),
             "final_minus": problem.objective(tm.final_state, dm)}
    if tp.n != tm.n:
        extra["mismatch"] = f"iteration counts differ: {tp.n} vs {tm.n}; compared on common prefix"
    return SensitivityHistory("central_fd", direction, values, np.array(tp.residual_norm_history[: n + 1]), extra)


def converged_fd_sensitivity(hist: SensitivityHistory, h: float) -> float:
    """FD of the converged objectives of both runs, which may have different lengths."""
    return (hist.extra["final_plus"] - hist.extra["final_minus"]) / (2.0 * h)


# ----------------------------------------------------------------------------
# one step


@dataclass
class OneStepLinearization:
    dNdu: np.ndarray
    dNdD: np.ndarray  # columns per design variable


def one_step_map(problem: FixedPointProblem, u, d: DesignVector, cfl: float, cfg: SolverConfig):
    """``N(u, D)`` for one accepted step without rejection handling."""
    g = problem.geometry(d)
    if cfg.explicit:
        return explicit_step(problem, u, g, cfl, cfg.alphas)[0]
    return ptc_step(problem, u, g, cfl, cfg).u_next


def dense_one_step_diff(
    problem: FixedPointProblem,
    u,
    d: DesignVector,
    cfl: float,
    cfg: SolverConfig,
    h: float = CS_STEP,
) -> OneStepLinearization:
    """Dense ``dN/du`` and ``dN/dD`` of one iteration by complex step over every input."""
    n = problem.n_unknowns
    if n > 50:
        raise ValueError("dense one-step differentiation is limited to 50 unknowns")
    u = np.asarray(u, dtype=float)
    dndu = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        dndu[:, j] = np.imag(one_step_map(problem, u + 1j * h * e, d, cfl, cfg)) / h
    dndd = np.empty((n, problem.n_bumps))
    for j in range(problem.n_bumps):
        e = np.zeros(problem.n_bumps)
        e[j] = 1.0
        dndd[:, j] = np.imag(one_step_map(problem, u.astype(complex), d.perturbed(e, h), cfl, cfg)) / h
    return OneStepLinearization(dndu, dndd)


def spectral_norm(a: np.ndarray, iters: int = 500, tol: float = 1e-12, seed: int = 0) -> float:
    """Largest singular value by power iteration on ``A^T A``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(a.shape[1])
    x /= np.linalg.norm(x)
    sigma = 0.0
    for _ in range(iters):
        y = a.T @ (a @ x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        new = float(np.sqrt(ny))
        if abs(new - sigma) <= tol * new:
            return new
        sigma = new
    return sigma
