"""Command line entry point.

``fpisens run <config.json> [--out DIR] [--experiment NAME] [--threads N]``

Exit codes: 0 success, 2 invalid configuration, 3 a solver failure in at
least one case (the remaining cases still run and are written).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, parse_config, spec_from_dict
from .experiments import run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fpisens", description="Sensitivity error experiments for fixed-point solvers.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment described by a JSON file")
    run.add_argument("config", help="experiment JSON file")
    run.add_argument("--out", help="output directory (overrides output_dir)")
    run.add_argument("--experiment", help="experiment name (overrides the file)")
    run.add_argument("--threads", type=int, help="concurrent tolerance cases (overrides threads)")
    run.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        spec = parse_config(args.config)
        updates = {}
        if args.experiment is not None:
            updates["experiment"] = args.experiment
        if args.out is not None:
            updates["output_dir"] = args.out
        if args.threads is not None:
            updates["threads"] = args.threads
        if updates:
            spec = spec_from_dict({**spec.model_dump(mode="json"), **updates})
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run_experiment(spec)
    except OSError as err:
        print(f"cannot write output: {err}", file=sys.stderr)
        return EXIT_SOLVER
    for c in report.cases:
        mx, mn = c.tangent_diff_range()
        line = f"tol={c.tolerance:.1e} {c.status} iters={c.primal_iterations} residual={c.final_residual:.3e}"
        if c.status == "ok":
            line += " max_diff=" + ",".join(f"{v:.2e}" for v in mx)
        else:
            line += f" error={c.error}"
        print(line)
    print(f"wrote {spec.output_dir}")
    return EXIT_SOLVER if report.failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
