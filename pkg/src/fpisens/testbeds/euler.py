"""Quasi-1D Euler nozzle: Van Leer flux-vector splitting with unlimited MUSCL.

Non-dimensional variables with stagnation density and pressure at the inlet.
Conservative variables per cell are ``(rho, rho*u, rho*E)``.  All functions
accept float, complex and dual arrays; branch decisions use real parts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..numerics import ad
from ..problem import DesignVector, FixedPointProblem, GeometryVector, NonPhysicalStateError
from .geometry import bump_matrix, parabolic_nozzle


class NozzleConfig(BaseModel):
    """JSON-facing nozzle configuration."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["nozzle"] = "nozzle"
    cells: int = Field(100, ge=4)
    gamma: float = Field(1.4, gt=1.0)
    inlet_area: float = Field(1.5, gt=0.0)
    throat_area: float = Field(1.0, gt=0.0)
    exit_area: float = Field(1.5, gt=0.0)
    stagnation_pressure: float = Field(1.0, gt=0.0)
    stagnation_density: float = Field(1.0, gt=0.0)
    back_pressure: float = Field(0.8, gt=0.0)
    bump_peaks: tuple[float, ...] = (0.35, 0.65)
    target_pressure: Literal["linear", "values"] = "linear"
    target_pressure_values: list[float] | None = None
    target_pressure_inlet: float = 0.9
    target_pressure_outlet: float = 0.7
    initial_state: Literal["first_order", "quasi1d_exact", "uniform"] = "first_order"
    initial_mach: float = Field(0.3, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check(self):
        if self.back_pressure >= self.stagnation_pressure:
            raise ValueError("back_pressure must be below the stagnation pressure")
        if any(not 0.0 < t < 1.0 for t in self.bump_peaks):
            raise ValueError("bump peaks must lie in (0, 1)")
        if self.target_pressure == "values":
            if self.target_pressure_values is None or len(self.target_pressure_values) != self.cells:
                raise ValueError("target_pressure_values must give one value per cell")
        return self


@dataclass(frozen=True)
class FaceState:
    left: object
    right: object


# ----------------------------------------------------------------------------
# thermodynamics


def primitives(q, gamma: float):
    rho = q[..., 0]
    m = q[..., 1]
    u = m / rho
    p = (gamma - 1.0) * (q[..., 2] - 0.5 * m * u)
    return rho, u, p


def conservative(rho, u, p, gamma: float):
    return ad.stack([rho, rho * u, p / (gamma - 1.0) + 0.5 * rho * u * u], axis=-1)


def euler_flux(q, gamma: float):
    """Exact flux ``(rho u, rho u^2 + p, (rho E + p) u)``."""
    rho, u, p = primitives(q, gamma)
    m = q[..., 1]
    return ad.stack([m, m * u + p, (q[..., 2] + p) * u], axis=-1)


def _split_flux(q, gamma: float, sign: int):
    rho, u, p = primitives(q, gamma)
    c = ad.sqrt(gamma * p / rho)
    mach = u / c
    fm = sign * rho * c * (mach + sign) * (mach + sign) * 0.25
    a = (gamma - 1.0) * u + sign * 2.0 * c
    partial = ad.stack([fm, fm * a / gamma, fm * a * a / (2.0 * (gamma * gamma - 1.0))], axis=-1)
    mr = ad.real_part(mach)[..., None]
    full = euler_flux(q, gamma)
    if sign > 0:
        return ad.where(mr >= 1.0, full, ad.where(mr <= -1.0, 0.0 * partial, partial))
    return ad.where(mr <= -1.0, full, ad.where(mr >= 1.0, 0.0 * partial, partial))


def vanleer_flux(left, right, area=1.0, gamma: float = 1.4):
    """Area-weighted Van Leer flux ``A (F+(left) + F-(right))``; states may be batched over faces."""
    for side, q in (("left", left), ("right", right)):
        if ad.is_dual(q) or np.iscomplexobj(q):
            continue
        rho, _, pr = primitives(np.asarray(q), gamma)
        bad = np.atleast_1d((rho <= 0) | (pr <= 0))
        if np.any(bad):
            face = int(np.flatnonzero(bad)[0])
            raise NonPhysicalStateError(f"non-physical {side} state at face {face}", face)
    f = _split_flux(left, gamma, +1) + _split_flux(right, gamma, -1)
    area = area if np.ndim(ad.value(area)) == 0 else area[..., None]
    return f * area


def compute_gradients(q, dx: float):
    """Central slopes in the interior, one-sided at both ends."""
    return ad.concatenate(
        [
            (q[1:2] - q[0:1]) / dx,
            (q[2:] - q[:-2]) / (2.0 * dx),
            (q[-1:] - q[-2:-1]) / dx,
        ],
        axis=0,
    )


def muscl_reconstruct(q, slopes, dx: float) -> FaceState:
    """States on both sides of each interior face ``j+1/2``, ``j = 0..n-2``."""
    half = 0.5 * dx
    return FaceState(q[:-1] + slopes[:-1] * half, q[1:] - slopes[1:] * half)


def local_time_step(q, dx: float, gamma: float = 1.4) -> np.ndarray:
    """``dx / (|u| + c)`` per cell from the real part of the state."""
    rho, u, p = primitives(np.real(ad.value(q)), gamma)
    if np.any(rho <= 0) or np.any(p <= 0):
        cell = int(np.flatnonzero((rho <= 0) | (p <= 0))[0])
        raise NonPhysicalStateError(f"non-physical state at cell {cell}", cell)
    return dx / (np.abs(u) + np.sqrt(gamma * p / rho))


# ----------------------------------------------------------------------------
# problem


class NozzleProblem(FixedPointProblem):
    """Converging-diverging nozzle, subsonic stagnation inflow, back-pressure outflow."""

    name = "nozzle"
    nvar = 3

    def __init__(self, cfg: NozzleConfig | None = None):
        self.cfg = cfg = cfg or NozzleConfig()
        self.ncells = cfg.cells
        self.gamma = cfg.gamma
        self.x_faces = np.linspace(0.0, 1.0, cfg.cells + 1)
        self.base_areas = parabolic_nozzle(self.x_faces, cfg.inlet_area, cfg.throat_area, cfg.exit_area)
        self.bumps = bump_matrix(self.x_faces, cfg.bump_peaks)
        if cfg.target_pressure == "values":
            self.p_target = np.asarray(cfg.target_pressure_values, dtype=float)
        else:
            self.p_target = np.linspace(cfg.target_pressure_inlet, cfg.target_pressure_outlet, cfg.cells)
        self.c0sq = cfg.gamma * cfg.stagnation_pressure / cfg.stagnation_density
        self._first_order: np.ndarray | None = None

    # ---- boundary ghosts --------------------------------------------------------

    def inflow_ghost(self, q0):
        """Stagnation state with the interior velocity: isentropic relations give p and rho."""
        g = self.gamma
        u = q0[..., 1] / q0[..., 0]
        csq = self.c0sq - 0.5 * (g - 1.0) * u * u
        p = self.cfg.stagnation_pressure * ad.power(csq / self.c0sq, g / (g - 1.0))
        rho = g * p / csq
        return conservative(rho, u, p, g)

    def outflow_ghost(self, qn):
        rho, u, _ = primitives(qn, self.gamma)
        return conservative(rho, u, 0.0 * rho + self.cfg.back_pressure, self.gamma)

    # ---- hooks --------------------------------------------------------------

    def cell_gradients(self, q, dx):
        return compute_gradients(q, dx)

    def cell_residual(self, q, geom: GeometryVector, order: int, slopes=None):
        dx = geom.cell_width
        if order == 2:
            s = compute_gradients(q, dx) if slopes is None else slopes
            faces = muscl_reconstruct(q, s, dx)
            half = 0.5 * dx
            left = ad.concatenate([self.inflow_ghost(q[0:1]), faces.left, q[-1:] + s[-1:] * half], axis=0)
            right = ad.concatenate([q[0:1] - s[0:1] * half, faces.right, self.outflow_ghost(q[-1:])], axis=0)
        else:
            left = ad.concatenate([self.inflow_ghost(q[0:1]), q], axis=0)
            right = ad.concatenate([q, self.outflow_ghost(q[-1:])], axis=0)
        a = geom.areas
        af = vanleer_flux(left, right, a, self.gamma)
        _, _, p = primitives(q, self.gamma)
        src = p * (a[1:] - a[:-1])
        zero = 0.0 * src
        return af[1:] - af[:-1] - ad.stack([zero, src, zero], axis=-1)

    def wave_speed(self, q):
        rho, u, p = primitives(q, self.gamma)
        return np.abs(u) + np.sqrt(self.gamma * p / rho)

    def check_physical(self, q):
        q = np.real(np.asarray(q)).reshape(self.ncells, self.nvar)
        rho, _, p = primitives(q, self.gamma)
        bad = ~((rho > 0) & (p > 0))
        if np.any(bad):
            cell = int(np.flatnonzero(bad)[0])
            raise NonPhysicalStateError(f"non-positive density or pressure at cell {cell}", cell)

    def pressure(self, u):
        return primitives(self.as_cells(u), self.gamma)[2]

    def cell_objective(self, q, geom: GeometryVector):
        _, _, p = primitives(q, self.gamma)
        diff = p - self.p_target
        return np.sum(diff * diff, axis=-1) * geom.cell_width

    def initial_state(self, design: DesignVector | None = None) -> np.ndarray:
        """Design-independent start.

        ``quasi1d_exact`` is the exact quasi-1D solution (isentropic flow with
        at most one normal shock) on the base area at the cell centres;
        ``uniform`` is a uniform stagnation-consistent state at ``initial_mach``
        and has zero reconstruction slopes; ``first_order`` is the converged
        first-order discrete solution on the base area, started from
        ``quasi1d_exact`` (computed once and cached).
        """
        if self.cfg.initial_state == "first_order":
            if self._first_order is None:
                self._first_order = self._solve_first_order()
            return self._first_order.copy()
        if self.cfg.initial_state == "quasi1d_exact":
            xc = self.x_cells
            return self.exact_solution(xc, np.interp(xc, self.x_faces, self.base_areas)).reshape(-1)
        g = self.gamma
        m = self.cfg.initial_mach
        t = 1.0 + 0.5 * (g - 1.0) * m * m
        p = self.cfg.stagnation_pressure * t ** (-g / (g - 1.0))
        rho = self.cfg.stagnation_density * t ** (-1.0 / (g - 1.0))
        u = m * np.sqrt(g * p / rho)
        q = conservative(np.full(self.ncells, rho), np.full(self.ncells, u), np.full(self.ncells, p), g)
        return np.asarray(q).reshape(-1)

    def _solve_first_order(self, tol: float = 1e-13, max_iter: int = 200) -> np.ndarray:
        """PTC with direct solves on the order-1 residual at the base geometry."""
        from ..numerics.linsolve import direct_dense_solve

        g = self.geometry(DesignVector(np.zeros(self.n_bumps)))
        xc = self.x_cells
        u = self.exact_solution(xc, np.interp(xc, self.x_faces, self.base_areas)).reshape(-1)
        cfl = 1.0
        for _ in range(max_iter):
            r = self.residual(u, g, 1)
            if np.linalg.norm(r) <= tol:
                return u
            try:
                un = u + direct_dense_solve(self.precondition_matrix(u, g, cfl, 1), -r)
                self.check_physical(un)
                self.residual(un, g, 1)
            except (NonPhysicalStateError, np.linalg.LinAlgError, ValueError):
                cfl *= 0.5
                continue
            u = un
            cfl = min(2.0 * cfl, 1e12)
        raise RuntimeError("first-order initial state did not converge")

    # ---- analytic reference ------------------------------------------------------

    def _mach_from_area(self, area_ratio, supersonic: bool) -> np.ndarray:
        from scipy.optimize import brentq

        g = self.gamma

        def ratio(m):
            return (2.0 / (g + 1.0) * (1.0 + 0.5 * (g - 1.0) * m * m)) ** ((g + 1.0) / (2.0 * (g - 1.0))) / m

        lo, hi = (1.0, 50.0) if supersonic else (1e-8, 1.0)
        out = []
        for r in np.atleast_1d(area_ratio):
            out.append(1.0 if abs(r - 1.0) < 1e-14 else brentq(lambda m: ratio(m) - r, lo, hi, xtol=1e-15))
        return np.array(out)

    def _state_from_mach(self, mach, p0):
        g = self.gamma
        t = 1.0 + 0.5 * (g - 1.0) * mach**2
        p = p0 * t ** (-g / (g - 1.0))
        rho = (p0 / self.cfg.stagnation_pressure) * self.cfg.stagnation_density * t ** (-1.0 / (g - 1.0))
        return np.asarray(conservative(rho, mach * np.sqrt(g * p / rho), p, g))

    def exact_solution(self, x, area) -> np.ndarray:
        """Exact quasi-1D state at ``x`` for the base throat area and back pressure.

        Shock-free subsonic flow if the back pressure allows it; otherwise the
        normal-shock position in the diverging part is found so that the exit
        pressure matches.  Returns conservative variables, shape ``(len(x), 3)``.
        """
        from scipy.optimize import brentq

        g = self.gamma
        p0 = self.cfg.stagnation_pressure
        pb = self.cfg.back_pressure
        at = float(np.min(self.base_areas))
        xt = float(self.x_faces[np.argmin(self.base_areas)])
        ae = float(self.base_areas[-1])
        x = np.asarray(x, dtype=float)
        area = np.asarray(area, dtype=float)

        def p_exit_subsonic(astar, p0_):
            m = self._mach_from_area(ae / astar, False)[0]
            return p0_ * (1.0 + 0.5 * (g - 1.0) * m * m) ** (-g / (g - 1.0))

        if pb >= p_exit_subsonic(at, p0):
            # unchoked: find the sonic area giving the back pressure
            astar = brentq(lambda a: p_exit_subsonic(a, p0) - pb, 1e-6 * at, at)
            return self._state_from_mach(self._mach_from_area(area / astar, False), p0)

        def area_at(xs):
            return float(np.interp(xs, self.x_faces, self.base_areas))

        def post_shock(xs):
            m1 = self._mach_from_area(area_at(xs) / at, True)[0]
            m2 = np.sqrt((1.0 + 0.5 * (g - 1.0) * m1 * m1) / (g * m1 * m1 - 0.5 * (g - 1.0)))
            r0 = ((g + 1.0) * m1 * m1 / ((g - 1.0) * m1 * m1 + 2.0)) ** (g / (g - 1.0)) * (
                (g + 1.0) / (2.0 * g * m1 * m1 - (g - 1.0))
            ) ** (1.0 / (g - 1.0))
            return m2, p0 * r0

        def exit_pressure(xs):
            _, p02 = post_shock(xs)
            return p_exit_subsonic(at * p0 / p02, p02)

        xs = brentq(lambda s: exit_pressure(s) - pb, xt + 1e-9, float(self.x_faces[-1]) - 1e-9)
        _, p02 = post_shock(xs)
        out = np.empty((x.size, 3))
        up = x < xt
        sup = (x >= xt) & (x < xs)
        down = x >= xs
        if np.any(up):
            out[up] = self._state_from_mach(self._mach_from_area(area[up] / at, False), p0)
        if np.any(sup):
            out[sup] = self._state_from_mach(self._mach_from_area(area[sup] / at, True), p0)
        if np.any(down):
            out[down] = self._state_from_mach(self._mach_from_area(area[down] / (at * p0 / p02), False), p02)
        return out
