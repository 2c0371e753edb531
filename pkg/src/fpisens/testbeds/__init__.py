from .burgers import BurgersConfig, BurgersProblem
from .euler import (
    FaceState,
    NozzleConfig,
    NozzleProblem,
    compute_gradients,
    euler_flux,
    local_time_step,
    muscl_reconstruct,
    vanleer_flux,
)
from .geometry import bump_matrix, hicks_henne_bump, parabolic_nozzle

ProblemConfig = NozzleConfig | BurgersConfig


def build_problem(cfg):
    """Problem instance from a nozzle or Burgers configuration."""
    if isinstance(cfg, NozzleConfig):
        return NozzleProblem(cfg)
    if isinstance(cfg, BurgersConfig):
        return BurgersProblem(cfg)
    raise TypeError(f"unknown problem configuration {type(cfg).__name__}")


__all__ = [
    "BurgersConfig",
    "BurgersProblem",
    "FaceState",
    "NozzleConfig",
    "NozzleProblem",
    "ProblemConfig",
    "build_problem",
    "bump_matrix",
    "compute_gradients",
    "euler_flux",
    "hicks_henne_bump",
    "local_time_step",
    "muscl_reconstruct",
    "parabolic_nozzle",
    "vanleer_flux",
]
