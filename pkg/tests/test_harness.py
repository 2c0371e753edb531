import json

import numpy as np
import pytest

from fpisens.harness.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main
from fpisens.harness.config import (
    DEFAULT_TOLERANCES,
    ConfigError,
    ExperimentSpec,
    default_solver,
    dump_config,
    parse_config,
    spec_from_dict,
)
from fpisens.harness.experiments import (
    CaseResult,
    ErrorReport,
    contraction_ratio,
    convergence_order,
    decay_slope,
    run_experiment,
    truncation_indices,
)
from fpisens.harness.plots import emit_plot_data

BURGERS5 = {"kind": "burgers", "cells": 5}
DIVERGING = {"scheme": "forward_euler", "cfl0": 50, "cfl_ramp_beta": 1, "cfl_max": 50, "max_outer_iterations": 200}


def write_json(path, data):
    path.write_text(json.dumps(data))
    return path


# ---- config -------------------------------------------------------------------------


def test_minimal_config_defaults(tmp_path):
    spec = parse_config(write_json(tmp_path / "c.json", {}))
    assert spec.experiment == "single_run"
    assert spec.tolerances == DEFAULT_TOLERANCES
    assert spec.tolerances[0] == 1e-1 and spec.tolerances[-1] == pytest.approx(1e-12)
    assert spec.problem.kind == "nozzle"
    assert spec.resolved_directions == [[1.0, 0.0], [0.0, 1.0]]
    assert spec.resolved_solver == default_solver("single_run")


@pytest.mark.parametrize("tols", [[1.5], [0.0], [1e-2, 1e-1]])
def test_bad_tolerances_named(tmp_path, tols):
    with pytest.raises(ConfigError, match="tolerances"):
        parse_config(write_json(tmp_path / "c.json", {"tolerances": tols}))


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="solver.bogus"):
        spec_from_dict({"solver": {"bogus": 1}})


def test_bad_type_names_path_and_type():
    with pytest.raises(ConfigError) as info:
        spec_from_dict({"problem": {"kind": "nozzle", "cells": "many"}})
    assert "problem.nozzle.cells" in str(info.value) and "str" in str(info.value)


def test_direction_length_checked():
    with pytest.raises(ConfigError, match="design_directions"):
        spec_from_dict({"design_directions": [[1.0, 0.0, 0.0]]})


def test_invalid_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config(p)


def test_config_round_trip(tmp_path):
    spec = spec_from_dict({"experiment": "inexact_newton_sweep", "tolerances": [1e-2, 1e-5], "problem": BURGERS5,
                           "solver": default_solver("inexact_newton_sweep").model_dump(mode="json"),
                           "design_directions": [[1.0, -1.0]], "oracle": {"method": "central_fd", "step": 1e-5}})
    p = tmp_path / "c.json"
    p.write_text(dump_config(spec))
    assert parse_config(p) == spec


# ---- diagnostics --------------------------------------------------------------------


def test_convergence_order_examples():
    linear = 0.5 ** np.arange(40)
    assert convergence_order(linear) == pytest.approx(1.0, abs=1e-12)
    quad = [1e-1, 1e-2, 1e-4, 1e-8, 1e-16]
    assert convergence_order(quad) == pytest.approx(2.0, abs=1e-12)
    assert contraction_ratio(linear) == pytest.approx(0.5, rel=1e-12)


def test_decay_slope_examples():
    r = 10.0 ** -np.linspace(0, 10, 50)
    assert decay_slope(3.0 * r, r) == pytest.approx(1.0, abs=1e-12)
    assert decay_slope(r**2, r) == pytest.approx(2.0, abs=1e-12)


def test_truncation_indices():
    assert truncation_indices(0, 40) == []
    assert truncation_indices(5, 40) == [1, 2, 3, 4, 5]
    ks = truncation_indices(1000, 40)
    assert ks[0] == 1 and ks[-1] == 1000 and len(ks) == 40


# ---- plots --------------------------------------------------------------------------


def test_empty_report_headers_only(tmp_path):
    emit_plot_data(ErrorReport("single_run"), tmp_path)
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert lines == ["tolerance,max_diff_dv1,min_diff_dv1,max_diff_dv2,min_diff_dv2,primal_iters,final_residual"]
    assert len((tmp_path / "summary_adjoint.csv").read_text().splitlines()) == 1


def test_two_tolerance_report_two_rows(tmp_path):
    cases = [CaseResult(t, np.eye(2), residual_norms=np.array([1.0, t])) for t in (1e-2, 1e-3)]
    emit_plot_data(ErrorReport("exact_newton_sweep", cases), tmp_path)
    rows = (tmp_path / "summary.csv").read_text().splitlines()
    assert len(rows) == 3
    assert rows[1].startswith("0.01,") and rows[2].startswith("0.001,")


def test_outputs_byte_identical_across_reruns(tmp_path):
    spec = spec_from_dict({"experiment": "exact_newton_sweep", "tolerances": [1e-2, 1e-6], "problem": BURGERS5})
    run_experiment(spec, tmp_path / "a")
    run_experiment(spec, tmp_path / "b", threads=2)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert any(f.suffix == ".svg" for f in files) and any(f.name == "history.csv" for f in files)
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_svg_is_well_formed(tmp_path):
    import xml.etree.ElementTree as ET

    spec = spec_from_dict({"experiment": "exact_newton_sweep", "tolerances": [1e-2], "problem": BURGERS5})
    run_experiment(spec, tmp_path)
    for p in tmp_path.rglob("*.svg"):
        assert ET.parse(p).getroot().tag.endswith("svg")


# ---- experiments ----------------------------------------------------------------------


def test_single_run_converged_agreement():
    spec = spec_from_dict({"tolerances": [1e-10], "problem": BURGERS5})
    rep = run_experiment(spec, emit=False)
    (c,) = rep.cases
    assert c.status == "ok" and c.converged
    final_t, final_c, final_a = c.tangent[-1], c.complex[-1], c.adjoint[-1]
    np.testing.assert_allclose(final_t, final_c, rtol=1e-8)
    np.testing.assert_allclose(final_a, final_c, rtol=1e-8)


def test_exact_sweep_difference_near_tolerance():
    spec = spec_from_dict({"experiment": "exact_newton_sweep", "tolerances": [1e-1, 1e-4],
                           "epsilon_diagnostics": False})
    rep = run_experiment(spec, emit=False)
    for c in rep.cases:
        mx, _ = c.tangent_diff_range()
        assert np.all((mx >= c.tolerance / 100) & (mx <= 100 * c.tolerance)), (c.tolerance, mx)


def test_min_difference_decreases_with_tighter_target():
    mins = []
    for target in (1e-6, 1e-9, 1e-12):
        solver = default_solver("exact_newton_sweep").model_copy(update={"residual_reduction_target": target})
        spec = spec_from_dict({"experiment": "exact_newton_sweep", "tolerances": [1e-2], "epsilon_diagnostics": False,
                               "solver": solver.model_dump(mode="json"), "max_adjoint_truncations": 1})
        mins.append(run_experiment(spec, emit=False).cases[0].tangent_diff_range()[1])
    mins = np.array(mins)
    assert np.all(np.diff(mins, axis=0) <= 0)
    assert np.all(mins[-1] < mins[0])


def test_failed_case_recorded_and_sweep_continues():
    spec = spec_from_dict({"experiment": "exact_newton_sweep", "tolerances": [1e-2, 1e-4], "problem": BURGERS5,
                           "solver": DIVERGING})
    rep = run_experiment(spec, emit=False)
    assert rep.failed and len(rep.cases) == 2
    assert all(c.status == "failed" and "DivergenceError" in c.error for c in rep.cases)


def test_central_fd_oracle_option():
    spec = spec_from_dict({"tolerances": [1e-10], "problem": BURGERS5, "oracle": {"method": "central_fd"}})
    (c,) = run_experiment(spec, emit=False).cases
    assert c.status == "ok"
    assert abs(c.tangent[-1] - c.complex[-1]).max() <= 1e-5 * abs(c.complex[-1]).max()


# ---- cli ------------------------------------------------------------------------------


def test_cli_success(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"experiment": "exact_newton_sweep", "tolerances": [1e-3],
                                           "problem": BURGERS5})
    assert main(["run", str(cfg), "--out", str(tmp_path / "out")]) == EXIT_OK
    assert (tmp_path / "out" / "summary.csv").exists()
    assert "tol=1.0e-03 ok" in capsys.readouterr().out


def test_cli_validation_error(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"tolerances": [1.5]})
    assert main(["run", str(cfg)]) == EXIT_CONFIG
    assert "tolerances" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert main(["run", str(write_json(tmp_path / "d.json", {})), "--experiment", "nope"]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG


def test_cli_solver_failure(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"problem": BURGERS5, "solver": DIVERGING})
    assert main(["run", str(cfg), "--out", str(tmp_path / "out")]) == EXIT_SOLVER
    assert "failed" in (tmp_path / "out" / "diagnostics.csv").read_text()


def test_cli_overrides(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"tolerances": [1e-2, 1e-4], "problem": BURGERS5})
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out), "--experiment", "exact_newton_sweep", "--threads", "2"]) == 0
    assert len((out / "summary.csv").read_text().splitlines()) == 3


def test_spec_is_frozen():
    spec = ExperimentSpec()
    with pytest.raises(Exception):
        spec.threads = 4
