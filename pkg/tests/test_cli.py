import json
import subprocess
import sys

import numpy as np
import pytest

from paneldpd.cli import DataError, format_dataset, main, parse_dataset, parse_grid, read_constraints
from paneldpd.model import PARAM_NAMES
from paneldpd.simulate import DEFAULT_THETA, SimConfig, simulate_dataset


@pytest.fixture
def datafile(tmp_path):
    path = tmp_path / "d.csv"
    assert main(["simulate", "--seed", "4", "--m", "60", "-o", str(path)]) == 0
    return path


def test_simulate_shape_and_sidecar(datafile):
    lines = datafile.read_text().splitlines()
    assert lines[0].startswith("#schedule: ")
    assert lines[1] == "#layout: interval-major,event-minor"
    rows = [l.split(",") for l in lines[2:]]
    assert len(rows) == 60 and all(len(r) == 7 for r in rows)
    side = json.loads((datafile.parent / "d.csv.json").read_text())
    assert side["epsilon"] == 0.0 and side["seed"] == 4
    assert side["theta_true"] == DEFAULT_THETA.to_dict()


def test_simulate_records_epsilon(tmp_path):
    path = tmp_path / "e.csv"
    assert main(["simulate", "--seed", "1", "--epsilon", "0.085", "-o", str(path)]) == 0
    assert json.loads((tmp_path / "e.csv.json").read_text())["epsilon"] == 0.085


def test_simulate_byte_identical(tmp_path, datafile):
    again = tmp_path / "again.csv"
    assert main(["simulate", "--seed", "4", "--m", "60", "-o", str(again)]) == 0
    assert again.read_bytes() == datafile.read_bytes()


def test_round_trip():
    data = simulate_dataset(SimConfig(m=25, seed=3), 0)
    assert parse_dataset(format_dataset(data)) == data


@pytest.mark.parametrize(
    "text,needle",
    [
        ("1,0,0\n", ":1:"),
        ("#schedule: 0.1,1\n#layout: interval-major,event-minor\n1,0\n", ":3:"),
        ("#schedule: 0.1,1\n#layout: interval-major,event-minor\n1,0,x\n", ":3:"),
        ("#schedule: 0.1,1\n#layout: event-major\n", ":2:"),
        ("#schedule: 0.1,1\n1,0,0\n", "layout"),
    ],
)
def test_parse_errors_name_lines(text, needle):
    with pytest.raises(DataError, match=needle):
        parse_dataset(text, "f")


def test_fit_report(tmp_path, datafile):
    out = tmp_path / "fit"
    assert main(["fit", "--data", str(datafile), "-o", str(out)]) == 0
    rep = json.loads(out.with_suffix(".json").read_text())
    assert min(rep["h"]) >= -1e-8
    assert set(rep["std_errors"]) == set(PARAM_NAMES)
    assert rep["kkt"]["min_h"] >= -1e-8
    assert "theta_hat" in out.with_suffix(".txt").read_text()


def test_mle_coverage(tmp_path):
    path = tmp_path / "big.csv"
    assert main(["simulate", "--seed", "8", "--m", "400", "-o", str(path)]) == 0
    out = tmp_path / "mle"
    assert main(["fit", "--data", str(path), "--estimator", "mle", "-o", str(out)]) == 0
    rep = json.loads(out.with_suffix(".json").read_text())
    truth = DEFAULT_THETA.to_dict()
    inside = sum(
        abs(rep["theta_hat"][p] - truth[p]) <= 3 * rep["std_errors"][p] for p in PARAM_NAMES if rep["std_errors"][p] > 0
    )
    assert inside >= 4


def test_usage_errors(datafile, tmp_path):
    assert main(["fit", "--data", str(datafile), "--estimator", "bogus"]) == 2
    assert main(["nonsense"]) == 2
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"no_such_key": 1}))
    assert main(["fit", "--data", str(datafile), "--config", str(cfg)]) == 2
    cfg.write_text(json.dumps({"threads": 0}))
    assert main(["fit", "--data", str(datafile), "--config", str(cfg)]) == 2


def test_data_error_exit(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("#schedule: 0.1,1\n#layout: interval-major,event-minor\n1,0\n")
    assert main(["fit", "--data", str(bad)]) == 3
    assert main(["fit", "--data", str(tmp_path / "missing.csv")]) == 3


def test_numeric_failure_exit(datafile, tmp_path):
    # the literal five-parameter information matrix is singular
    assert main(["fit", "--data", str(datafile), "--gauge", "none", "--max-outer", "5", "-o", str(tmp_path / "x")]) == 4
    # infeasible start under the ordering constraints
    assert main(["fit", "--data", str(datafile), "--theta-init", "4.6,0.4,0.4,0.5,0.1", "-o", str(tmp_path / "y")]) == 4


def test_config_overridden_by_flags(datafile, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"gamma": 0.3, "estimator": "mdpd"}))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["fit", "--data", str(datafile), "--config", str(cfg), "-o", str(a)]) == 0
    assert main(["fit", "--data", str(datafile), "--config", str(cfg), "--gamma", "0.4", "-o", str(b)]) == 0
    assert json.loads(a.with_suffix(".json").read_text())["gamma"] == 0.3
    assert json.loads(b.with_suffix(".json").read_text())["gamma"] == 0.4


def test_constraint_file(datafile, tmp_path):
    cmat = tmp_path / "A.txt"
    cmat.write_text("# a1 >= a2 only\n0 1 0 -1 0\n")
    assert read_constraints(cmat).r == 1
    out = tmp_path / "fit1"
    assert main(["fit", "--data", str(datafile), "--constraints", str(cmat), "-o", str(out)]) == 0
    assert len(json.loads(out.with_suffix(".json").read_text())["h"]) == 1
    cmat.write_text("0 1 0\n")
    assert main(["fit", "--data", str(datafile), "--constraints", str(cmat)]) == 3


def test_tune_single_value_grid(datafile, tmp_path):
    out = tmp_path / "tune"
    assert main(["tune", "--data", str(datafile), "--grid", "0.4", "--pilots", "0.4", "-o", str(out)]) == 0
    rep = json.loads(out.with_suffix(".json").read_text())
    assert rep["gsm"]["gamma_opt"] == 0.4 and rep["iwj"]["gamma_opt"] == 0.4
    assert main(["tune", "--data", str(datafile), "--grid", "0.4", "--method", "gsm", "-o", str(out)]) == 0


def test_grid_parsing():
    assert parse_grid("0.2:0.4:0.1").values == (0.2, 0.3, 0.4)
    assert parse_grid("0.5,0.7").values == (0.5, 0.7)


def test_gof_one_sample(datafile, tmp_path):
    out = tmp_path / "gof"
    assert main(["gof", "--data", str(datafile), "--bootstrap-samples", "1", "-o", str(out)]) == 0
    rep = json.loads(out.with_suffix(".json").read_text())
    assert rep["p_value"] in (0.0, 1.0)
    assert rep["mode"] == "fixed" and set(rep["theta_hat"]) == set(PARAM_NAMES)


def test_benchmark_single_cell(tmp_path):
    out = tmp_path / "bench"
    args = ["benchmark", "--reps", "2", "--m", "40", "--estimators", "mdpd", "--gamma", "0.5",
            "--restriction", "restricted", "--radius-mode", "fixed", "-o", str(out)]
    assert main(args) == 0
    rep = json.loads(out.with_suffix(".json").read_text())
    assert len(rep["cells"]) == 1 and len(rep["cells"][0]["estimators"]) == 1
    row = rep["cells"][0]["estimators"][0]
    assert {"mean", "bias", "mse", "n_ok", "n_failed", "label"} <= set(row)


def test_output_dir_env(tmp_path, monkeypatch, datafile):
    monkeypatch.setenv("PANELDPD_OUTPUT_DIR", str(tmp_path / "reports"))
    assert main(["fit", "--data", str(datafile), "--radius-mode", "fixed"]) == 0
    assert (tmp_path / "reports" / "fit.json").exists()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "paneldpd.cli", "simulate", "--m", "5", "-o", str(tmp_path / "s.csv")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
