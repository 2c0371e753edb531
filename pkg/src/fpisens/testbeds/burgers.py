"""1D viscous Burgers with forcing, Dirichlet ends and area-weighted fluxes.

``R_i = A_{i+1/2} F_{i+1/2} - A_{i-1/2} F_{i-1/2} - f_i vol_i`` with an upwind
convective flux on reconstructed states and a central viscous flux.  With the
default unit areas it is the plain Burgers residual; the Hicks-Henne bumps act
on the areas so the design enters the residual.
"""

from __future__ import annotations

from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..numerics import ad
from ..problem import DesignVector, FixedPointProblem, GeometryVector
from .geometry import bump_matrix
from .euler import compute_gradients


class BurgersConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["burgers"] = "burgers"
    cells: int = Field(20, ge=3)
    viscosity: float = Field(0.05, ge=0.0)
    left_value: float = 1.0
    right_value: float = 0.5
    forcing_amplitude: float = 0.5
    base_area: float = Field(1.0, gt=0.0)
    bump_peaks: tuple[float, ...] = (0.35, 0.65)
    initial_value: float | None = None


class BurgersProblem(FixedPointProblem):
    name = "burgers"
    nvar = 1

    def __init__(self, cfg: BurgersConfig | None = None):
        self.cfg = cfg = cfg or BurgersConfig()
        self.ncells = cfg.cells
        self.x_faces = np.linspace(0.0, 1.0, cfg.cells + 1)
        self.base_areas = np.full(cfg.cells + 1, cfg.base_area)
        self.bumps = bump_matrix(self.x_faces, cfg.bump_peaks)
        self.forcing = cfg.forcing_amplitude * np.sin(np.pi * self.x_cells)

    def cell_gradients(self, q, dx):
        return compute_gradients(q, dx)

    def cell_residual(self, q, geom: GeometryVector, order: int, slopes=None):
        dx = geom.cell_width
        nu = self.cfg.viscosity
        u = q[:, 0]
        # mirror ghosts put the Dirichlet value on the boundary face
        gl = 2.0 * self.cfg.left_value - u[0:1]
        gr = 2.0 * self.cfg.right_value - u[-1:]
        if order == 2:
            s = (compute_gradients(q, dx) if slopes is None else slopes)[:, 0]
            half = 0.5 * dx
            left = ad.concatenate([gl, u + s * half], axis=0)
            right = ad.concatenate([u - s * half, gr], axis=0)
        else:
            left = ad.concatenate([gl, u], axis=0)
            right = ad.concatenate([u, gr], axis=0)
        upwind = ad.real_part(left + right) >= 0.0
        conv = ad.where(upwind, 0.5 * left * left, 0.5 * right * right)
        ext = ad.concatenate([gl, u, gr], axis=0)
        visc = (ext[1:] - ext[:-1]) * (-nu / dx)
        flux = (conv + visc) * geom.areas
        r = flux[1:] - flux[:-1] - self.forcing * geom.volumes()
        return r.reshape(self.ncells, 1)

    def wave_speed(self, q):
        return np.abs(q[:, 0]) + 2.0 * self.cfg.viscosity / self.dx

    def cell_objective(self, q, geom: GeometryVector):
        u = q[..., 0]
        return np.sum(u * u, axis=-1) * geom.cell_width

    def initial_state(self, design: DesignVector | None = None) -> np.ndarray:
        if self.cfg.initial_value is not None:
            return np.full(self.ncells, float(self.cfg.initial_value))
        x = self.x_cells
        return self.cfg.left_value + (self.cfg.right_value - self.cfg.left_value) * x
