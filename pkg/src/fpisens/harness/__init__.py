"""Experiment driver: configuration, tolerance sweeps, reports and plots."""

from .config import ConfigError, ExperimentSpec, default_solver, dump_config, parse_config, spec_from_dict
from .experiments import (
    AdjointEpsilons,
    CaseResult,
    ErrorReport,
    adjoint_epsilons,
    contraction_ratio,
    convergence_order,
    decay_slope,
    run_case,
    run_experiment,
)
from .plots import emit_plot_data, write_svg_lineplot

__all__ = [
    "AdjointEpsilons",
    "CaseResult",
    "ConfigError",
    "ErrorReport",
    "ExperimentSpec",
    "adjoint_epsilons",
    "contraction_ratio",
    "convergence_order",
    "decay_slope",
    "default_solver",
    "dump_config",
    "emit_plot_data",
    "parse_config",
    "run_case",
    "run_experiment",
    "spec_from_dict",
    "write_svg_lineplot",
]
