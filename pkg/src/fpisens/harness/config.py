"""Experiment specification and JSON loading."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..numerics.linsolve import LinearSolveConfig
from ..oracle import OracleConfig
from ..solvers import SolverConfig
from ..testbeds import BurgersConfig, NozzleConfig

ExperimentName = Literal["exact_newton_sweep", "inexact_newton_sweep", "rk_frozen_gradient", "duality_check",
                         "single_run"]

DEFAULT_TOLERANCES = [10.0 ** -p for p in range(1, 13)]

ProblemSpec = Annotated[NozzleConfig | BurgersConfig, Field(discriminator="kind")]


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key path."""


def default_solver(experiment: str) -> SolverConfig:
    """Solver settings each experiment family uses when none are given."""
    if experiment == "inexact_newton_sweep":
        return SolverConfig(jacobian_order=1, cfl_max=50.0, max_outer_iterations=400,
                            linear=LinearSolveConfig(preconditioner="gauss_seidel", preconditioner_sweeps=5))
    if experiment == "rk_frozen_gradient":
        return SolverConfig(scheme="rk5_frozen_gradients", cfl0=1.0, cfl_ramp_beta=1.0, cfl_max=1.0,
                            residual_reduction_target=1e-10, max_outer_iterations=6000)
    if experiment == "duality_check":
        return SolverConfig(jacobian_order=1, cfl_max=50.0, max_outer_iterations=200,
                            residual_reduction_target=1e-14,
                            linear=LinearSolveConfig(method="gauss_seidel_fixed_sweeps", n_sweeps=5))
    return SolverConfig(cfl0=30.0, cfl_ramp_beta=5.0, cfl_max=1e12,
                        linear=LinearSolveConfig(preconditioner="first_order_lu"))


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    experiment: ExperimentName = "single_run"
    tolerances: list[float] = Field(default_factory=lambda: list(DEFAULT_TOLERANCES), min_length=1)
    design_directions: list[list[float]] | None = None  # None: one unit direction per bump
    output_dir: Path = Path("fpisens_out")
    problem: ProblemSpec = Field(default_factory=NozzleConfig)
    solver: SolverConfig | None = None
    oracle: OracleConfig = OracleConfig()
    max_adjoint_truncations: int = Field(40, ge=1)
    epsilon_diagnostics: bool = True
    write_trajectories: bool = False
    threads: int = Field(1, ge=1)

    @field_validator("tolerances")
    @classmethod
    def _tolerances(cls, v: list[float]) -> list[float]:
        for t in v:
            if not 0.0 < t < 1.0:
                raise ValueError(f"each tolerance must lie in (0, 1), got {t}")
        for a, b in zip(v, v[1:]):
            if not b < a:
                raise ValueError("tolerances must be strictly decreasing")
        return v

    @model_validator(mode="after")
    def _directions(self):
        if self.design_directions is not None:
            n = len(self.problem.bump_peaks)
            if not self.design_directions:
                raise ValueError("design_directions must not be empty")
            for i, row in enumerate(self.design_directions):
                if len(row) != n:
                    raise ValueError(f"design_directions[{i}] has {len(row)} entries, expected {n} (one per bump)")
        return self

    @property
    def resolved_solver(self) -> SolverConfig:
        return self.solver if self.solver is not None else default_solver(self.experiment)

    @property
    def resolved_directions(self) -> list[list[float]]:
        if self.design_directions is not None:
            return [list(r) for r in self.design_directions]
        n = len(self.problem.bump_peaks)
        return [[1.0 if i == j else 0.0 for i in range(n)] for j in range(n)]


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        got = type(e.get("input")).__name__
        lines.append(f"{path}: {e['msg']} (got {got})")
    return "; ".join(lines)


def spec_from_dict(data: dict) -> ExperimentSpec:
    try:
        return ExperimentSpec.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_errors(err)) from None


def parse_config(path) -> ExperimentSpec:
    """Load and validate a JSON experiment description; unknown keys are rejected."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err.strerror}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON at line {err.lineno} column {err.colno}: {err.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"<root>: expected a JSON object (got {type(data).__name__})")
    return spec_from_dict(data)


def dump_config(spec: ExperimentSpec) -> str:
    return spec.model_dump_json(indent=2)
