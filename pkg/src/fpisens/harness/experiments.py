"""Tolerance sweeps, iterative differences against the complex-step oracle and
error-term diagnostics.

Definitions used throughout (``k = 0..n``, one column per design direction):

* iterative difference: ``|dLdD_method^k - dLdD_complex^k|``; max/min skip ``k = 0``;
* ``eps_L^k``: tangent minus complex-step sensitivity at iteration ``k``;
* ``eps_u^k``: norm of ``du^k/dD`` (tangent) minus ``Im u^k / h`` (complex rerun);
* adjoint terms, by differencing against a reverse sweep with exact solves on
  the same trajectory: ``eps_Lambda^k = ||Lambda^k_exact - Lambda^k||`` from two
  full sweeps, and at every step the one-step errors of the approximate dual
  solve applied to the exact multiplier, ``eps_uA^k = ||(J2 + M)^T (psi - psi~)||``
  and ``eps_D^k = G_D (psi - psi~)`` per direction.
"""

from __future__ import annotations

import logging
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..adjoint import dual_solve, reverse_step_ops, run_adjoint, run_adjoint_all_truncations
from ..numerics.linsolve import LinearSolveConfig, direct_dense_solve, is_linear_in_rhs
from ..oracle import central_fd_history, complex_step_history
from ..problem import DesignVector, FixedPointProblem
from ..solvers import SolverConfig, Trajectory, run_primal, write_trajectory_csv
from ..tangent import run_tangent
from ..testbeds import build_problem
from .config import ExperimentSpec

log = logging.getLogger(__name__)

SWEEPS = ("exact_newton_sweep", "inexact_newton_sweep")


@dataclass
class AdjointEpsilons:
    k: np.ndarray  # step indices n..1 in ascending order
    eps_lambda: np.ndarray  # ||Lambda^{k-1}_exact - Lambda^{k-1}||
    eps_u: np.ndarray
    eps_D: np.ndarray  # (len(k), n_directions)


@dataclass
class CaseResult:
    tolerance: float
    directions: np.ndarray
    status: str = "ok"
    error: str | None = None
    primal_iterations: int = 0
    converged: bool = False
    residual_norms: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tangent: np.ndarray | None = None  # (n+1, ndir)
    complex: np.ndarray | None = None  # (n+1, ndir), or central FD when the oracle says so
    adjoint_k: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    adjoint: np.ndarray | None = None  # (len(adjoint_k), ndir)
    eps_u: np.ndarray | None = None  # (n+1, ndir)
    adjoint_eps: AdjointEpsilons | None = None
    contraction_ratio: float = float("nan")
    convergence_order: float = float("nan")

    @property
    def final_residual(self) -> float:
        return float(self.residual_norms[-1]) if len(self.residual_norms) else float("nan")

    @property
    def eps_L(self) -> np.ndarray | None:
        if self.tangent is None or self.complex is None:
            return None
        return np.abs(self.tangent - self.complex)

    def tangent_diff_range(self) -> tuple[np.ndarray, np.ndarray]:
        return _max_min(self.eps_L, len(self.directions))

    def adjoint_diff_range(self) -> tuple[np.ndarray, np.ndarray]:
        if self.adjoint is None or self.complex is None:
            return _max_min(None, len(self.directions))
        diff = np.abs(self.adjoint - self.complex[self.adjoint_k])
        return _max_min(diff[self.adjoint_k > 0], len(self.directions), skip_first=False)


@dataclass
class ErrorReport:
    experiment: str
    cases: list[CaseResult] = field(default_factory=list)
    n_directions: int = 2

    @property
    def failed(self) -> bool:
        return any(c.status != "ok" for c in self.cases)


def _max_min(diff, ndir: int, skip_first: bool = True):
    if diff is None:
        return np.full(ndir, np.nan), np.full(ndir, np.nan)
    d = diff[1:] if skip_first else diff
    if len(d) == 0:
        return np.full(ndir, np.nan), np.full(ndir, np.nan)
    return d.max(axis=0), d.min(axis=0)


# ----------------------------------------------------------------------------
# scalar diagnostics


def contraction_ratio(res, decades: float = 2.0) -> float:
    """Geometric mean of ``||R^{k+1}|| / ||R^k||`` over the final ``decades`` of residual decay."""
    r = np.asarray(res, dtype=float)
    if len(r) < 3:
        return float("nan")
    mask = r[:-1] <= r[-1] * 10.0 ** decades
    idx = np.nonzero(mask)[0]
    if len(idx) < 1:
        return float("nan")
    ratios = r[idx + 1] / r[idx]
    ratios = ratios[ratios > 0]
    return float(np.exp(np.mean(np.log(ratios)))) if len(ratios) else float("nan")


def convergence_order(res, floor: float = 1e-11, start: float = 1e-1, min_points: int = 2) -> float:
    """Slope of ``log r_{k+1}`` against ``log r_k`` over the asymptotic phase.

    Uses relative residuals ``r_k = ||R^k|| / ||R^0||`` with ``r_k <= start`` and
    ``r_{k+1} >= floor`` (round-off floor); at least ``min_points`` pairs are
    taken from the tail when fewer qualify.
    """
    r = np.asarray(res, dtype=float) / float(res[0])
    pairs = [(r[k], r[k + 1]) for k in range(len(r) - 1) if r[k] <= start and r[k + 1] >= floor and r[k + 1] > 0]
    if len(pairs) < min_points:
        pairs = [(r[k], r[k + 1]) for k in range(max(0, len(r) - 1 - min_points), len(r) - 1) if r[k + 1] > 0]
    if len(pairs) < 2:
        return float("nan")
    x = np.log([p[0] for p in pairs])
    y = np.log([p[1] for p in pairs])
    return float(np.polyfit(x, y, 1)[0])


def decay_slope(eps, res, decades: float = 2.0) -> float:
    """Least-squares slope of ``log eps^k`` against ``log ||R^k||`` over the final ``decades``."""
    eps = np.asarray(eps, dtype=float)
    r = np.asarray(res, dtype=float)
    mask = (r <= r[-1] * 10.0 ** decades) & (eps > 0)
    mask[0] = False
    if mask.sum() < 2 or np.ptp(np.log(r[mask])) == 0.0:
        return float("nan")
    return float(np.polyfit(np.log(r[mask]), np.log(eps[mask]), 1)[0])


def truncation_indices(n: int, limit: int) -> list[int]:
    """At most ``limit`` evenly spread indices in ``1..n``, always including ``1`` and ``n``."""
    if n <= 0:
        return []
    if n <= limit:
        return list(range(1, n + 1))
    return sorted(set(int(round(x)) for x in np.linspace(1, n, limit)))


# ----------------------------------------------------------------------------
# adjoint error terms


def adjoint_epsilons(problem: FixedPointProblem, traj: Trajectory, directions, linear: LinearSolveConfig,
                     ops_cache: dict | None = None) -> AdjointEpsilons:
    """Error terms of the reverse sweep relative to one with exact dual solves."""
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    dgs = [problem.geometry_direction(e) for e in dirs]
    cache = {} if ops_cache is None else ops_cache
    lam_x = -problem.objective_du(traj.final_state, traj.design)
    lam_a = lam_x.copy()
    ks, e_lam, e_u, e_d = [], [], [], []
    for k in range(traj.n, 0, -1):
        if k not in cache:
            cache[k] = reverse_step_ops(problem, traj, k, dgs, linear)
        ops = cache[k]
        psi_x = direct_dense_solve(ops.p, lam_x, trans=True)
        psi_t = dual_solve(ops, lam_x, linear).solution
        psi_a = dual_solve(ops, lam_a, linear).solution
        ks.append(k)
        e_u.append(float(np.linalg.norm(ops.opT @ (psi_x - psi_t))))
        e_d.append(ops.rows @ (psi_x - psi_t))
        lam_x = lam_x - ops.opT @ psi_x
        lam_a = lam_a - ops.opT @ psi_a
        e_lam.append(float(np.linalg.norm(lam_x - lam_a)))
    order = np.argsort(ks)
    return AdjointEpsilons(np.array(ks)[order], np.array(e_lam)[order], np.array(e_u)[order],
                           np.array(e_d).reshape(len(ks), len(dirs))[order])


# ----------------------------------------------------------------------------
# cases


def _case_solver(spec: ExperimentSpec, tol: float) -> SolverConfig:
    cfg = spec.resolved_solver
    if spec.experiment in SWEEPS or (spec.experiment == "single_run" and cfg.linear.method == "gmres"):
        cfg = cfg.model_copy(update={"linear": cfg.linear.model_copy(update={"rel_tolerance": tol})})
    return cfg


def case_tolerances(spec: ExperimentSpec) -> list[float]:
    """Sweeps run every tolerance; other experiments run a single case."""
    if spec.experiment in SWEEPS:
        return list(spec.tolerances)
    if spec.experiment == "single_run":
        return [spec.tolerances[0]]
    return [spec.resolved_solver.linear.rel_tolerance]


def run_case(spec: ExperimentSpec, problem: FixedPointProblem, tol: float, case_dir: Path | None = None) -> CaseResult:
    dirs = np.array(spec.resolved_directions, dtype=float)
    out = CaseResult(tol, dirs)
    try:
        _fill_case(spec, problem, tol, out, case_dir)
    except Exception as err:  # recorded per case; the sweep continues
        out.status = "failed"
        out.error = f"{type(err).__name__}: {err}"
        log.warning("case tol=%g failed: %s", tol, out.error)
        log.debug("%s", traceback.format_exc())
    return out


def _fill_case(spec: ExperimentSpec, problem: FixedPointProblem, tol: float, out: CaseResult, case_dir) -> None:
    cfg = _case_solver(spec, tol)
    d = DesignVector(np.zeros(problem.n_bumps))
    dirs = out.directions
    traj = run_primal(problem, d, cfg)
    out.primal_iterations = traj.n
    out.converged = traj.converged
    out.residual_norms = np.array(traj.residual_norm_history)
    out.contraction_ratio = contraction_ratio(out.residual_norms)
    out.convergence_order = convergence_order(out.residual_norms)
    if case_dir is not None and spec.write_trajectories:
        write_trajectory_csv(traj, Path(case_dir) / "trajectory")

    tans = [run_tangent(problem, traj, e, keep_states=spec.epsilon_diagnostics) for e in dirs]
    out.tangent = np.column_stack([t.values for t in tans])

    h = spec.oracle.resolved_step
    if spec.oracle.method == "complex_step":
        refs = [complex_step_history(problem, d, cfg, e, h=h, reference=traj) for e in dirs]
        out.complex = np.column_stack([c.values for c in refs])
        if spec.epsilon_diagnostics:
            eu = []
            for t, c in zip(tans, refs):
                cs_states = np.array([np.imag(u) / h for u in c.extra["trajectory"].states])
                eu.append(np.linalg.norm(t.extra["dudD_history"] - cs_states, axis=1))
            out.eps_u = np.column_stack(eu)
    else:
        fds = [central_fd_history(problem, d, cfg, e, h=h) for e in dirs]
        n = min(len(f.values) for f in fds)
        out.complex = np.column_stack([f.values[:n] for f in fds])
        out.tangent = out.tangent[:n]

    if cfg.explicit:
        # the truncated adjoint costs O(n^2) steps for explicit schemes; one full sweep only
        res = run_adjoint(problem, traj, dirs)
        out.adjoint_k = np.array([traj.n])
        out.adjoint = res.sensitivity[None, :]
    else:
        ks = truncation_indices(traj.n, spec.max_adjoint_truncations)
        cache: dict = {}
        if is_linear_in_rhs(cfg.linear):
            adj = run_adjoint_all_truncations(problem, traj, dirs, ks)
        else:
            adj = {k: run_adjoint(problem, traj, dirs, k, ops_cache=cache).sensitivity for k in ks}
        out.adjoint_k = np.array(ks, dtype=int)
        out.adjoint = np.array([adj[k] for k in ks]).reshape(len(ks), len(dirs))
        if spec.epsilon_diagnostics and traj.n > 0:
            out.adjoint_eps = adjoint_epsilons(problem, traj, dirs, cfg.linear, cache)


def run_experiment(spec: ExperimentSpec, output_dir=None, threads: int | None = None, emit: bool = True) -> ErrorReport:
    """Run every case of ``spec``; files go to ``output_dir`` (default ``spec.output_dir``)."""
    from .plots import emit_plot_data

    out_dir = Path(output_dir) if output_dir is not None else Path(spec.output_dir)
    problem = build_problem(spec.problem)
    tols = case_tolerances(spec)
    dirs = [out_dir / f"case_{i:02d}" for i in range(len(tols))]
    n_threads = threads or spec.threads
    if n_threads > 1 and len(tols) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            cases = list(pool.map(lambda a: run_case(spec, problem, *a), zip(tols, dirs)))
    else:
        cases = [run_case(spec, problem, t, c) for t, c in zip(tols, dirs)]
    report = ErrorReport(spec.experiment, cases, len(spec.resolved_directions))
    if emit:
        emit_plot_data(report, out_dir)
    return report
