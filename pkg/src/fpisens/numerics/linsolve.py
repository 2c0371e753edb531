"""Linear solvers shared by the primal, tangent and adjoint iterations.

Every routine accepts real or complex data.  For complex data the Krylov
process uses bilinear (unconjugated) products, so a complex-step perturbed
solve is the analytic continuation of the real solve, and every stopping
decision looks at real parts only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field

from . import ad
from .matrix import as_dense, block_size_of

LinearMethod = Literal["gmres", "gauss_seidel_fixed_sweeps", "direct_dense"]


class LinearSolveError(RuntimeError):
    pass


class SingularMatrixError(LinearSolveError):
    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class SingularBlockError(SingularMatrixError):
    pass


class LinearSolveConfig(BaseModel):
    """How the per-step linear systems are solved.

    GMRES is right-preconditioned by ``preconditioner``:

    * ``gauss_seidel``: ``preconditioner_sweeps`` fixed forward sweeps on the
      system matrix (0 sweeps disables preconditioning);
    * ``first_order_lu``: an LU factorization of a separately supplied matrix,
      in practice the first-order PTC matrix when solving with the
      second-order one;
    * ``none``.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    method: LinearMethod = "gmres"
    rel_tolerance: float = Field(1e-10, gt=0.0, lt=1.0)
    max_iterations: int = Field(600, ge=1)
    restart: int = Field(60, ge=1)
    n_sweeps: int = Field(5, ge=1)
    preconditioner: Literal["gauss_seidel", "first_order_lu", "none"] = "gauss_seidel"
    preconditioner_sweeps: int = Field(1, ge=0)


@dataclass
class LinearSolveResult:
    solution: np.ndarray
    achieved_rel_residual: float
    iterations_used: int
    status: str = "converged"  # converged | max_iterations | breakdown | fixed
    restart_residuals: list[float] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status in ("converged", "fixed")


def _dot(x, y):
    return np.dot(x, y)


def _norm(x):
    return ad.sqrt(np.asarray(np.dot(x, x)))


def _real_norm(x) -> float:
    xr = np.real(x)
    return float(np.sqrt(np.dot(xr, xr)))


def relative_residual(a, x, b) -> float:
    bn = _real_norm(b)
    r = b - a.matvec(x) if hasattr(a, "matvec") else b - a @ x
    return _real_norm(r) / bn if bn > 0 else _real_norm(r)


# ----------------------------------------------------------------------------
# Gauss-Seidel


class _BandedLU:
    """LU with partial pivoting of a banded matrix (LAPACK ``gbtrf``/``gbtrs``)."""

    def __init__(self, dense: np.ndarray):
        n = dense.shape[0]
        i, j = np.nonzero(dense)
        self.kl = int(max(np.max(i - j, initial=0), 0))
        self.ku = int(max(np.max(j - i, initial=0), 0))
        kl, ku = self.kl, self.ku
        gbtrf, self._gbtrs = scipy.linalg.get_lapack_funcs(("gbtrf", "gbtrs"), (dense,))
        ab = np.zeros((2 * kl + ku + 1, n), dtype=self._gbtrs.dtype)
        for off in range(-kl, ku + 1):  # off = column - row
            rows = np.arange(max(0, -off), min(n, n - off))
            ab[kl + ku - off, rows + off] = dense[rows, rows + off]
        self.lu, self.piv, info = gbtrf(ab, kl, ku)
        if info > 0:
            raise SingularMatrixError(f"zero pivot at index {info - 1}", info - 1)

    def solve(self, b, trans: int = 0):
        x, info = self._gbtrs(self.lu, self.kl, self.ku, b, self.piv, trans=trans)
        if info != 0:
            raise LinearSolveError(f"banded solve failed (info={info})")
        return x


class GaussSeidel:
    """Forward block Gauss-Seidel sweeps ``x <- (D+L)^{-1} (b - U x)`` and their exact dual.

    Blocks are visited in ascending index order; the dual applies the
    transposed operator, i.e. backward sweeps on ``A^T``.
    """

    def __init__(self, a):
        dense = as_dense(a)
        bs = block_size_of(a)
        n = dense.shape[0]
        blk = np.arange(n) // bs
        lower = blk[:, None] >= blk[None, :]
        self.n = n
        self.block_size = bs
        self.dtype = np.result_type(dense.dtype, float)
        self.dl = np.where(lower, dense, 0).astype(self.dtype)
        self.upper = np.where(lower, 0, dense).astype(self.dtype)
        _check_diagonal_blocks(dense, bs)
        self._lu = _BandedLU(self.dl)
        self._ops: dict[int, np.ndarray] = {}

    def _cast(self, v):
        v = np.asarray(v)
        return v.astype(np.result_type(v.dtype, self.dtype), copy=False)

    def sweep(self, b, n_sweeps: int):
        b = self._cast(b)
        if b.dtype != self.dtype:  # complex data through a real sweep
            return self.sweep(b.real, n_sweeps) + 1j * self.sweep(b.imag, n_sweeps)
        x = self._lu.solve(b)
        for _ in range(n_sweeps - 1):
            x = self._lu.solve(b - self.upper @ x)
        return x

    def dual_sweep(self, c, n_sweeps: int):
        c = self._cast(c)
        if c.dtype != self.dtype:
            return self.dual_sweep(c.real, n_sweeps) + 1j * self.dual_sweep(c.imag, n_sweeps)
        ut = self.upper.T
        y = self._lu.solve(c, trans=1)
        for _ in range(n_sweeps - 1):
            y = self._lu.solve(c - ut @ y, trans=1)
        return y

    def operator(self, n_sweeps: int) -> np.ndarray:
        """Dense matrix of the ``n_sweeps`` sweep map; cached."""
        if n_sweeps not in self._ops:
            self._ops[n_sweeps] = self.sweep(np.eye(self.n, dtype=self.dtype), n_sweeps)
        return self._ops[n_sweeps]


def _check_diagonal_blocks(dense, bs: int) -> None:
    n = dense.shape[0]
    nb = n // bs
    idx = np.arange(nb)
    blocks = dense.reshape(nb, bs, nb, bs)[idx, :, idx, :]
    br = np.real(blocks)
    scale = np.max(np.abs(br), axis=(1, 2))
    det = np.linalg.det(br)
    bad = ~np.isfinite(det) | (np.abs(det) <= (np.finfo(float).eps * np.maximum(scale, np.finfo(float).tiny)) ** bs)
    bad |= scale == 0
    if np.any(bad):
        cell = int(np.flatnonzero(bad)[0])
        raise SingularBlockError(f"singular diagonal block at cell {cell}", cell)


def gauss_seidel_sweeps(a, b, n_sweeps: int):
    """``n_sweeps`` forward sweeps from a zero initial guess."""
    if n_sweeps < 1:
        raise ValueError("n_sweeps must be >= 1")
    return GaussSeidel(a).sweep(b, n_sweeps)


def gauss_seidel_dual_sweeps(a, c, n_sweeps: int):
    """Exact transpose of :func:`gauss_seidel_sweeps` as a linear map of its right-hand side."""
    if n_sweeps < 1:
        raise ValueError("n_sweeps must be >= 1")
    return GaussSeidel(a).dual_sweep(c, n_sweeps)


# ----------------------------------------------------------------------------
# direct


def direct_dense_solve(a, b, trans: bool = False):
    """LU with partial pivoting.  Raises :class:`SingularMatrixError` naming the pivot."""
    dense = as_dense(a)
    n = dense.shape[0]
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)  # singularity is reported below
        lu, piv = scipy.linalg.lu_factor(dense, check_finite=False)
    diag = np.abs(np.real(np.diag(lu)))
    scale = np.max(np.abs(np.real(dense))) if n else 0.0
    tiny = n * np.finfo(float).eps * scale
    bad = ~np.isfinite(diag) | (diag <= tiny)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise SingularMatrixError(f"matrix is singular to working precision at pivot {k}", k)
    return scipy.linalg.lu_solve((lu, piv), np.asarray(b), trans=1 if trans else 0, check_finite=False)


# ----------------------------------------------------------------------------
# GMRES


def gmres_solve(
    a,
    b,
    cfg: LinearSolveConfig,
    preconditioner: Callable[[np.ndarray], np.ndarray] | None = None,
    fixed_iterations: int | None = None,
) -> LinearSolveResult:
    """Restarted flexible GMRES from a zero initial guess.

    The preconditioner is applied on the right and may change between
    iterations.  A zero Arnoldi norm ends the solve; if the residual is then
    still above tolerance the status is ``"breakdown"``.

    ``fixed_iterations`` replaces the tolerance test by an exact iteration
    count (same restart pattern), so a complex-step rerun can replay the
    Krylov depth of a recorded real solve.
    """
    b = np.asarray(b)
    n = b.shape[0]
    dtype = np.result_type(a.dtype, b.dtype, float)
    tol = cfg.rel_tolerance
    x = np.zeros(n, dtype=dtype)
    bnorm = _real_norm(b)
    if bnorm == 0.0:
        return LinearSolveResult(x, 0.0, 0, "converged", [0.0])
    apply_m = preconditioner if preconditioner is not None else (lambda v: v)

    total = 0
    status = "max_iterations"
    r = b.astype(dtype)
    rel = 1.0
    history = [rel]
    budget = cfg.max_iterations if fixed_iterations is None else fixed_iterations
    pinned = fixed_iterations is not None
    while True:
        if not pinned and rel <= tol:
            status = "converged"
            break
        if total >= budget:
            if pinned:
                status = "converged" if rel <= tol else "max_iterations"
            break
        m = min(cfg.restart, budget - total)
        beta = _norm(r)
        V = np.zeros((m + 1, n), dtype=dtype)
        Z = np.zeros((m, n), dtype=dtype)
        H = np.zeros((m + 1, m), dtype=dtype)
        cs = np.zeros(m, dtype=dtype)
        sn = np.zeros(m, dtype=dtype)
        g = np.zeros(m + 1, dtype=dtype)
        g[0] = beta
        V[0] = r / beta
        k = 0
        broke = False
        for j in range(m):
            Z[j] = apply_m(V[j])
            w = a.matvec(Z[j])
            total += 1
            wnorm0 = _real_norm(w)
            # classical Gram-Schmidt with one reorthogonalization pass
            basis = V[: j + 1]
            h1 = basis @ w
            w = w - h1 @ basis
            h2 = basis @ w
            w = w - h2 @ basis
            H[: j + 1, j] = h1 + h2
            hn = _norm(w)
            H[j + 1, j] = hn
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            d = ad.sqrt(np.asarray(H[j, j] * H[j, j] + H[j + 1, j] * H[j + 1, j]))
            if not np.real(d) > 0.0:
                broke = True
                break
            cs[j] = H[j, j] / d
            sn[j] = H[j + 1, j] / d
            H[j, j] = d
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            if abs(np.real(hn)) <= 1e-14 * max(wnorm0, np.finfo(float).tiny):
                broke = True
                break
            V[j + 1] = w / hn
            if not pinned and abs(np.real(g[j + 1])) / bnorm <= tol:
                break
        if k > 0:
            y = np.zeros(k, dtype=dtype)
            for i in range(k - 1, -1, -1):
                y[i] = (g[i] - _dot(H[i, i + 1 : k], y[i + 1 : k])) / H[i, i]
            x = x + Z[:k].T @ y
        r = b - a.matvec(x)
        rel = _real_norm(r) / bnorm
        history.append(rel)
        if broke:
            status = "converged" if rel <= tol else "breakdown"
            break
    return LinearSolveResult(x, rel, total, status, history)


# ----------------------------------------------------------------------------
# dispatch


def make_preconditioner(a, cfg: LinearSolveConfig, pmat=None, transpose: bool = False, reuse: bool = False):
    """Right preconditioner for GMRES on ``A`` (or ``A^T`` when ``transpose``), or None.

    With ``reuse`` the Gauss-Seidel sweep map is formed once as a dense
    matrix, which pays off when the preconditioner serves many solves.
    """
    if cfg.preconditioner == "none":
        return None
    if cfg.preconditioner == "first_order_lu":
        if pmat is None:
            raise ValueError("first_order_lu preconditioning needs a preconditioning matrix")
        lu = scipy.linalg.lu_factor(as_dense(pmat), check_finite=False)
        trans = 1 if transpose else 0
        return lambda v: scipy.linalg.lu_solve(lu, v, trans=trans, check_finite=False)
    if cfg.preconditioner_sweeps == 0:
        return None
    gs = GaussSeidel(a.transpose() if transpose else a)
    nsw = cfg.preconditioner_sweeps
    if reuse:
        op = gs.operator(nsw)
        return lambda v: op @ v
    return lambda v: gs.sweep(v, nsw)


def solve(a, b, cfg: LinearSolveConfig, fixed_iterations: int | None = None, pmat=None) -> LinearSolveResult:
    """Solve ``A x = b`` with the configured method.

    ``fixed_iterations`` and ``pmat`` (matrix for ``first_order_lu``
    preconditioning) only affect GMRES.
    """
    b = np.asarray(b)
    if cfg.method == "gmres":
        return gmres_solve(a, b, cfg, make_preconditioner(a, cfg, pmat), fixed_iterations)
    if cfg.method == "gauss_seidel_fixed_sweeps":
        x = GaussSeidel(a).sweep(b, cfg.n_sweeps)
        return LinearSolveResult(x, relative_residual(a, x, b), cfg.n_sweeps, "fixed")
    x = direct_dense_solve(a, b)
    return LinearSolveResult(x, relative_residual(a, x, b), 1, "converged")


def solve_dual(a, c, cfg: LinearSolveConfig, pmat=None) -> LinearSolveResult:
    """Solve ``A^T y = c`` with the dual of the configured method.

    GMRES is run on the transposed matrix at the same tolerance, with the
    transposed preconditioner; fixed Gauss-Seidel uses the exact dual sweeps.
    ``c`` may hold several right-hand sides as columns except for GMRES.
    """
    c = np.asarray(c)
    if cfg.method == "gmres":
        return gmres_solve(a.transpose(), c, cfg, make_preconditioner(a, cfg, pmat, transpose=True))
    if cfg.method == "gauss_seidel_fixed_sweeps":
        y = GaussSeidel(a).dual_sweep(c, cfg.n_sweeps)
        res = relative_residual(a.transpose(), y, c) if c.ndim == 1 else float("nan")
        return LinearSolveResult(y, res, cfg.n_sweeps, "fixed")
    y = direct_dense_solve(a, c, trans=True)
    res = relative_residual(a.transpose(), y, c) if c.ndim == 1 else float("nan")
    return LinearSolveResult(y, res, 1, "converged")


def is_linear_in_rhs(cfg: LinearSolveConfig) -> bool:
    """True when the solver output is a fixed linear map of the right-hand side."""
    return cfg.method in ("gauss_seidel_fixed_sweeps", "direct_dense")
