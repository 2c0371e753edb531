"""Scalar-generic linear algebra: matrices, Krylov and Gauss-Seidel solvers, dual numbers."""

from .ad import Dual
from .linsolve import (
    GaussSeidel,
    LinearSolveConfig,
    LinearSolveError,
    LinearSolveResult,
    SingularBlockError,
    SingularMatrixError,
    direct_dense_solve,
    gauss_seidel_dual_sweeps,
    gauss_seidel_sweeps,
    gmres_solve,
    is_linear_in_rhs,
    make_preconditioner,
    solve,
    solve_dual,
)
from .matrix import BlockBandedMatrix, DenseMatrix, as_dense, transpose

__all__ = [
    "BlockBandedMatrix",
    "DenseMatrix",
    "Dual",
    "GaussSeidel",
    "LinearSolveConfig",
    "LinearSolveError",
    "LinearSolveResult",
    "SingularBlockError",
    "SingularMatrixError",
    "as_dense",
    "direct_dense_solve",
    "gauss_seidel_dual_sweeps",
    "gauss_seidel_sweeps",
    "gmres_solve",
    "is_linear_in_rhs",
    "make_preconditioner",
    "solve",
    "solve_dual",
    "transpose",
]
