"""Fixed-point problem contract and the derivative services built on it.

A testbed supplies a cell-wise residual over states of shape ``(ncells, nvar)``
that works for float, complex and :class:`~fpisens.numerics.ad.Dual` scalars.
Everything else here (Jacobians, preconditioner, Frechet products, design and
objective partials) is derived from that single code path.

States are passed around flattened, cell-major: ``u[i*nvar + v]``.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .numerics import ad
from .numerics.matrix import BlockBandedMatrix

CS_STEP = 1e-40


class NonPhysicalStateError(ValueError):
    """Raised for non-positive density/pressure or non-finite residuals."""

    def __init__(self, message: str, cell: int):
        super().__init__(message)
        self.cell = cell


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class DesignVector:
    """Hicks-Henne bump amplitudes ``D``; may carry a complex-step perturbation."""

    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.amplitudes))
        if a.ndim != 1:
            raise DesignError("design amplitudes must be a 1-d array")
        if not np.all(np.isfinite(a)):
            raise DesignError("design amplitudes must be finite")
        object.__setattr__(self, "amplitudes", a)

    @property
    def n_bumps(self) -> int:
        return self.amplitudes.size

    def perturbed(self, direction, h: float = CS_STEP) -> DesignVector:
        return DesignVector(ad.complex_step(self.amplitudes, direction, h))


@dataclass(frozen=True)
class GeometryVector:
    """Face areas (``ncells + 1``) and the uniform cell width."""

    areas: np.ndarray
    cell_width: float

    def __post_init__(self):
        a = np.asarray(self.areas)
        if not np.all(np.isfinite(a)):
            raise DesignError("areas must be finite")
        if np.any(np.real(a) <= 0.0):
            raise DesignError(f"non-positive area at face {int(np.flatnonzero(np.real(a) <= 0)[0])}")
        object.__setattr__(self, "areas", a)

    def perturbed(self, direction, h: float = CS_STEP) -> GeometryVector:
        return GeometryVector(ad.complex_step(self.areas, direction, h), self.cell_width)

    def volumes(self):
        """Cell volumes ``dx * (A_left + A_right) / 2``; complex if the areas are."""
        a = self.areas
        return self.cell_width * 0.5 * (a[:-1] + a[1:])


@dataclass
class ProblemDerivatives:
    jac_second_order: BlockBandedMatrix
    jac_first_order: BlockBandedMatrix
    residual_design_dirderiv: np.ndarray


class FixedPointProblem(ABC):
    """Base class for steady residual problems ``R(u, x(D)) = 0``.

    Subclasses set ``ncells``, ``nvar``, ``x_faces`` (face coordinates),
    ``base_areas`` and ``bumps`` (``n_bumps x (ncells+1)``), and implement the
    abstract cell-level hooks.  Instances are treated as immutable.
    """

    name: str = "problem"
    ncells: int
    nvar: int
    x_faces: np.ndarray
    base_areas: np.ndarray
    bumps: np.ndarray

    # ---- testbed hooks -----------------------------------------------------

    @abstractmethod
    def cell_residual(self, q, geom: GeometryVector, order: int, slopes=None):
        """Residual with shape ``(ncells, nvar)``; ``slopes`` overrides recomputed gradients."""

    @abstractmethod
    def cell_gradients(self, q, dx: float):
        """Per-cell slopes, same shape as ``q``."""

    @abstractmethod
    def wave_speed(self, q) -> np.ndarray:
        """Real per-cell signal speed used for the local time step."""

    @abstractmethod
    def cell_objective(self, q, geom: GeometryVector):
        """Objective for states with arbitrary leading batch axes ``(..., ncells, nvar)``."""

    @abstractmethod
    def initial_state(self, design: DesignVector | None = None) -> np.ndarray:
        """Flat initial state ``u^0``."""

    def check_physical(self, q) -> None:
        """Raise :class:`NonPhysicalStateError` for an invalid real state."""

    # ---- layout --------------------------------------------------------------

    @property
    def n_unknowns(self) -> int:
        return self.ncells * self.nvar

    @property
    def n_bumps(self) -> int:
        return self.bumps.shape[0]

    @property
    def area_scale(self) -> float:
        return float(np.min(self.base_areas))

    def as_cells(self, u):
        return u.reshape(self.ncells, self.nvar)

    def default_design(self) -> DesignVector:
        return DesignVector(np.zeros(self.n_bumps))

    # ---- geometry --------------------------------------------------------------

    def validate_design(self, d: DesignVector) -> None:
        if d.n_bumps != self.n_bumps:
            raise DesignError(f"expected {self.n_bumps} bump amplitudes, got {d.n_bumps}")
        lim = 0.2 * self.area_scale
        big = np.abs(np.real(d.amplitudes)) > lim
        if np.any(big):
            raise DesignError(f"bump amplitude {int(np.flatnonzero(big)[0])} exceeds 0.2 x area scale ({lim:g})")

    def geometry(self, d: DesignVector) -> GeometryVector:
        self.validate_design(d)
        return GeometryVector(self.base_areas + d.amplitudes @ self.bumps, self.dx)

    def geometry_direction(self, direction) -> np.ndarray:
        """``dx/dD`` applied to a design direction: the face-area perturbation."""
        return np.asarray(direction, dtype=float) @ self.bumps

    @property
    def dx(self) -> float:
        return float(self.x_faces[1] - self.x_faces[0])

    @property
    def x_cells(self) -> np.ndarray:
        return 0.5 * (self.x_faces[:-1] + self.x_faces[1:])

    # ---- residual ---------------------------------------------------------------

    def residual(self, u, g: GeometryVector, order: int = 2, slopes=None):
        """Flat residual.  Non-finite real/complex output raises with the first bad cell."""
        _check_order(order)
        r = self.cell_residual(self.as_cells(u), g, order, slopes)
        if isinstance(r, ad.Dual):
            return r.reshape(self.n_unknowns)
        bad = ~np.all(np.isfinite(r), axis=1)
        if np.any(bad):
            cell = int(np.flatnonzero(bad)[0])
            raise NonPhysicalStateError(f"non-finite residual at cell {cell}", cell)
        return r.reshape(-1)

    def gradients(self, u) -> np.ndarray:
        return self.cell_gradients(self.as_cells(u), self.dx)

    def residual_norm(self, u, g: GeometryVector, order: int = 2) -> float:
        return float(np.linalg.norm(np.real(self.residual(u, g, order))))

    # ---- Jacobians --------------------------------------------------------------

    @staticmethod
    def stencil_width(order: int) -> int:
        return order

    def _jvp_dual(self, u, g, v, order, slopes=None):
        """``J(u) v`` for possibly complex ``u`` via a single-seed dual evaluation."""
        q = ad.Dual.seed(self.as_cells(u), self.as_cells(np.asarray(v)))
        return self.residual(ad.Dual(q.val, q.eps), g, order, slopes).eps[0]

    def jvp(self, u, g: GeometryVector, v, order: int = 2, slopes=None):
        """Jacobian-vector product; slopes given as a fixed array are not differentiated."""
        return self._jvp_dual(u, g, v, order, slopes)

    def assemble_jacobian(self, u, g: GeometryVector, order: int = 2) -> BlockBandedMatrix:
        """Exact ``dR/du`` in block-banded storage (bandwidth = order).

        Columns are grouped into ``2w+1`` colors per variable and seeded as
        dual directions, so one residual evaluation gives the whole matrix.  ``u``
        may be complex, which the Frechet products rely on.
        """
        _check_order(order)
        w = self.stencil_width(order)
        nc, nv = self.ncells, self.nvar
        ncol = 2 * w + 1
        cells = np.arange(nc)
        color = cells % ncol
        seeds = np.zeros((ncol * nv, nc, nv))
        for c in range(ncol):
            for v in range(nv):
                seeds[c * nv + v, color == c, v] = 1.0
        q = self.as_cells(np.asarray(u))
        r = self.cell_residual(ad.Dual(q, seeds), g, order)
        eps = np.asarray(r.eps)  # (ncol*nv, nc, nv) with eps[c*nv+b, i, a] = dR_ia/du_jb
        eps = eps.reshape(ncol, nv, nc, nv)
        blocks = np.zeros((2 * w + 1, nc, nv, nv), dtype=eps.dtype)
        for k in range(2 * w + 1):
            off = k - w
            rows = cells[max(0, -off) : min(nc, nc - off)]
            cols = rows + off
            # block[a, b] = eps[color(col), b, row, a]
            blocks[k, rows] = np.transpose(eps[color[cols], :, rows, :], (0, 2, 1))
        return BlockBandedMatrix(blocks, w)

    def local_time_step(self, u, g: GeometryVector) -> np.ndarray:
        """``dt_i = dx / (|u_i| + c_i)`` from the real part of the state."""
        q = np.real(self.as_cells(np.asarray(u)))
        self.check_physical(q)
        return self.dx / self.wave_speed(q)

    def pseudo_time_shift(self, u, g: GeometryVector, cfl: float) -> np.ndarray:
        """Diagonal ``vol_i / (dt_i * cfl)``; frozen, i.e. computed from real parts."""
        vol = np.real(GeometryVector(np.real(g.areas), g.cell_width).volumes())
        return vol / (self.local_time_step(u, g) * cfl)

    def precondition_matrix(self, u, g: GeometryVector, cfl: float, order: int = 1) -> BlockBandedMatrix:
        """``P = [dR/du]_order + diag(vol / (dt cfl))``."""
        if not cfl > 0:
            raise ValueError("cfl must be positive")
        return self.assemble_jacobian(u, g, order).add_block_diagonal(self.pseudo_time_shift(u, g, cfl))

    # ---- Frechet products ----------------------------------------------------------

    def frechet_dPdu_times(self, u, g, cfl, w, v, order: int = 1, h: float = CS_STEP):
        """``[dP/du . w] v = Im[P(u + i h w) v] / h``; the pseudo-time diagonal is frozen."""
        del cfl  # only the frozen diagonal depends on it
        uc = ad.complex_step(u, w, h)
        return np.imag(self._jvp_dual(uc, g, v, order)) / h

    def frechet_dPdx_times(self, u, g, cfl, dg, v, order: int = 1, h: float = CS_STEP):
        """``[dP/dx . dg] v = Im[P(u, g + i h dg) v] / h``."""
        del cfl
        gc = g.perturbed(dg, h)
        return np.imag(self._jvp_dual(np.asarray(u, dtype=complex), gc, v, order)) / h

    def frechet_dPdu_matrix(self, u, g, w, order: int = 1, h: float = CS_STEP) -> BlockBandedMatrix:
        """``dP/du . w`` as a matrix, ``Im[J(u + i h w)] / h``."""
        jc = self.assemble_jacobian(ad.complex_step(u, w, h), g, order)
        return BlockBandedMatrix(np.imag(jc.blocks) / h, jc.bandwidth)

    def frechet_dPdx_matrix(self, u, g, dg, order: int = 1, h: float = CS_STEP) -> BlockBandedMatrix:
        jc = self.assemble_jacobian(np.asarray(u, dtype=complex), g.perturbed(dg, h), order)
        return BlockBandedMatrix(np.imag(jc.blocks) / h, jc.bandwidth)

    # ---- design derivatives ------------------------------------------------------

    def residual_geometry_dirderiv(self, u, g, dg, order: int = 2, slopes=None, h: float = CS_STEP):
        """``dR/dx . dg`` by complex step in the areas."""
        r = self.residual(np.asarray(u, dtype=complex), g.perturbed(dg, h), order, slopes)
        return np.imag(r) / h

    def residual_design_dirderiv(self, u, d: DesignVector, direction, order: int = 2, h: float = CS_STEP):
        """``Im[R(u, x(D + i h dir))] / h``."""
        r = self.residual(np.asarray(u, dtype=complex), self.geometry(d.perturbed(direction, h)), order)
        return np.imag(r) / h

    def derivatives(self, u, d: DesignVector, direction) -> ProblemDerivatives:
        g = self.geometry(d)
        return ProblemDerivatives(
            self.assemble_jacobian(u, g, 2),
            self.assemble_jacobian(u, g, 1),
            self.residual_design_dirderiv(u, d, direction),
        )

    # ---- objective ---------------------------------------------------------------

    def objective(self, u, d: DesignVector):
        return self.cell_objective(self.as_cells(u), self.geometry(d))

    def objective_du(self, u, d: DesignVector, h: float = CS_STEP) -> np.ndarray:
        """``dL/du`` with one batched complex-step evaluation per unknown."""
        n = self.n_unknowns
        batch = np.asarray(u, dtype=complex)[None, :] + 1j * h * np.eye(n)
        vals = self.cell_objective(batch.reshape(n, self.ncells, self.nvar), self.geometry(d))
        return np.imag(vals) / h

    def objective_dD(self, u, d: DesignVector, direction, h: float = CS_STEP) -> float:
        """Explicit design partial at frozen ``u``."""
        val = self.cell_objective(self.as_cells(np.asarray(u, dtype=complex)), self.geometry(d.perturbed(direction, h)))
        return float(np.imag(val) / h)


def _check_order(order: int) -> None:
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
