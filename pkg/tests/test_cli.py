from __future__ import annotations

import csv
import json
import logging
import os
import subprocess
import sys

import numpy as np
import pytest

from ymlab.cli import EXIT_DOMAIN, EXIT_OK, EXIT_USAGE, fmt, main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_unknown_flag_is_usage_error_and_writes_nothing(capsys, tmp_path):
    out = tmp_path / "o"
    code, _, err = run_cli(capsys, "constants", "--d", "11", "--bogus", "--out", str(out))
    assert code == EXIT_USAGE
    assert "error" in err
    assert not out.exists()


def test_missing_subcommand_is_usage_error(capsys):
    assert run_cli(capsys)[0] == EXIT_USAGE


def test_constants_summary(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "constants", "--d", "11", "--out", str(tmp_path))
    assert code == EXIT_OK
    data = json.loads(out)
    assert abs(data["gamma"] - 3.6972243622680054) < 1e-12
    assert max(abs(r) for r in data["quadratic_residuals"]) < 1e-12
    assert json.loads((tmp_path / "constants.json").read_text()) == data


def test_domain_error_exit_code(capsys):
    code, _, err = run_cli(capsys, "constants", "--d", "9")
    assert code == EXIT_DOMAIN
    assert "domain error" in err


def test_ground_state_d10(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "ground-state", "--d", "10", "--out", str(tmp_path))
    assert code == EXIT_OK
    data = json.loads(out)
    assert data["max_abs_error_vs_closed_form"] < 1e-8
    with open(tmp_path / "ground_state.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["xi", "Q", "dQ", "LambdaQ", "potential"]
    assert len(rows) == 401


def test_no_files_without_out(capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run_cli(capsys, "spectrum", "--d", "11", "--i-max", "2")[0] == EXIT_OK
    assert list(tmp_path.iterdir()) == []


def test_spectrum_and_quadrature(capsys):
    code, out, _ = run_cli(capsys, "spectrum", "--d", "11")
    data = json.loads(out)
    assert code == EXIT_OK and max(data["residual_exact"]) < 1e-9
    code, out, _ = run_cli(capsys, "quadrature-selftest", "--d", "11", "--k-max", "8")
    data = json.loads(out)
    assert code == EXIT_OK and abs(data["total_mass"] / data["total_mass_exact"] - 1.0) < 1e-10


def test_floats_have_17_significant_digits():
    assert fmt(0.1) == "0.10000000000000001"
    assert float(fmt(np.float64(1.0) / 3.0)) == 1.0 / 3.0
    assert fmt(True) == "1" and fmt(None) == ""


def _sweep(capsys, tmp_path, name, cfg):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / name
    code, text, err = run_cli(capsys, "sweep", "--config", str(path), "--out", str(out))
    return code, json.loads(text) if code == EXIT_OK else None, out


def test_empty_sweep_writes_header_only(capsys, tmp_path):
    code, data, out = _sweep(capsys, tmp_path, "empty", {"kind": "eigen-lb", "points": []})
    assert code == EXIT_OK and data["n_points"] == 0
    assert (out / "sweep.csv").read_text() == "status,lambda,lambda_tilde,limit,error\n"


def test_sweep_failed_point_is_recorded(capsys, tmp_path):
    code, data, _ = _sweep(capsys, tmp_path, "bad", {"kind": "eigen-lb", "points": [{"bogus": 1}]})
    assert code == EXIT_OK
    assert data["rows"][0][1] == "failed"


def test_eigen_sweep_dedupes_and_is_deterministic(capsys, tmp_path, caplog):
    cfg = {"kind": "eigen-lb", "base": {"i": 0},
           "points": [{"b": 1e-2}, {"b": 1e-3}, {"b": 1e-4}, {"b": 1e-2}]}
    with caplog.at_level(logging.WARNING, logger="ymlab"):
        code, data, out = _sweep(capsys, tmp_path, "a", cfg)
    assert code == EXIT_OK
    assert any("duplicate" in r.message for r in caplog.records)
    assert data["n_points"] == 3
    cols = data["columns"]
    by_b = sorted(data["rows"], key=lambda r: -r[cols.index("b")])
    lt = [abs(r[cols.index("lambda_tilde")]) for r in by_b]
    assert lt[0] > lt[1] > lt[2] > 0.0
    _, _, out2 = _sweep(capsys, tmp_path, "b", cfg)
    assert (out / "sweep.csv").read_bytes() == (out2 / "sweep.csv").read_bytes()


def test_eigen_lb_both_methods(capsys):
    code, out, _ = run_cli(capsys, "eigen-lb", "--d", "11", "--b", "1e-2", "--method", "both")
    row = json.loads(out)["rows"][0]
    assert code == EXIT_OK
    assert abs(row["lambda"] - row["lambda_matrix"]) < max(1e-4, 5 * row["matrix_error_estimate"])
    assert row["sign_changes"] == 0


def test_simulate_then_fit_rate_and_resume(capsys, tmp_path):
    cfg = {"b0": 1e-2, "tau_span": 0.2, "grid": {"y_min": 1e-4, "y_max": 12.0, "n_log": 300}, "m0": -0.6570524346528422}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "run"
    code, text, _ = run_cli(capsys, "simulate", "--config", str(path), "--out", str(out))
    assert code == EXIT_OK
    data = json.loads(text)
    assert data["status"] == "TRAPPED"
    assert data["max_compatibility_residual"] < 1e-8
    assert (out / "trace.csv").exists() and (out / "checkpoint.bin").exists()

    code, text, _ = run_cli(capsys, "simulate", "--config", str(path), "--resume", str(out / "checkpoint.bin"))
    assert code == EXIT_OK

    other = tmp_path / "other.json"
    other.write_text(json.dumps({**cfg, "b0": 2e-2}))
    code, _, err = run_cli(capsys, "simulate", "--config", str(other), "--resume", str(out / "checkpoint.bin"))
    assert code == EXIT_DOMAIN and "different configuration" in err

    # a 0.2 tau span has far too little mu decay for a fit
    code, _, err = run_cli(capsys, "fit-rate", "--trace", str(out / "trace.csv"))
    assert code == 2 and "numerical failure" in err


def test_fit_rate_missing_columns(capsys, tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("tau,t\n0,0\n")
    code, _, err = run_cli(capsys, "fit-rate", "--trace", str(p))
    assert code == EXIT_DOMAIN and "lacks columns" in err


def test_bad_thread_count(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("YMLAB_THREADS", "zero")
    code, _, _ = _sweep(capsys, tmp_path, "t", {"kind": "eigen-lb", "points": []})
    assert code == EXIT_DOMAIN


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "ymlab.cli", "constants", "--d", "12"],
                         capture_output=True, text=True, cwd=tmp_path, env={**os.environ})
    assert res.returncode == 0
    assert json.loads(res.stdout)["d"] == 12
