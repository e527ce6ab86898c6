"""CLI harness tests: config validation, scenarios, artifacts, report."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from granhop.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    ConfigError,
    ExperimentConfig,
    main,
    report,
    run,
)


def write_config(tmp_path, payload, name="cfg.json"):
    path = tmp_path / name
    with open(path, "w") as fh:
        json.dump(payload, fh)
    return str(path)


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

def test_config_round_trip_identity():
    cfg = ExperimentConfig.from_dict({
        "scenario": "hop", "plant": "analytic",
        "params": {"V0": -0.2}, "seed": 3, "out_dir": "x",
    })
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg


def test_config_lists_every_problem():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict({
            "scenario": "banana", "plant": "steam",
            "params": {"grid_csv": "/definitely/not/here.csv"},
        })
    assert len(exc.value.problems) == 3


def test_config_requires_scenario_fields():
    with pytest.raises(ConfigError, match="V0"):
        ExperimentConfig.from_dict({"scenario": "hop", "params": {}})


def test_cli_config_error_exit_code(tmp_path):
    rc = main(["hop", "--config", write_config(tmp_path, {"params": {}}),
               "--out", str(tmp_path / "o")])
    assert rc == EXIT_CONFIG


# ---------------------------------------------------------------------------
# scenarios (fast ones; DEM scenarios are covered by the acceptance suite)
# ---------------------------------------------------------------------------

def test_fit_scenario_recovers_shipped_table(tmp_path):
    out = tmp_path / "fit"
    rc = main(["fit", "--config",
               write_config(tmp_path, {"params": {"order": 2}}),
               "--out", str(out), "--seed", "0"])
    assert rc == EXIT_OK
    from granhop.ground import load_coefficient_table, load_model_json

    fit = load_model_json(out / "model.json")
    table = load_coefficient_table()
    ref = {(t.m, t.n): t for t in table.terms}
    for t in fit.terms:
        r = ref[(t.m, t.n)]
        assert t.A == pytest.approx(r.A, abs=1e-6)
        assert t.B == pytest.approx(r.B, abs=1e-6)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["ok"] is True
    assert (out / "error_map_z.csv").exists()


def test_hop_scenario_analytic(tmp_path):
    out = tmp_path / "hop"
    rc = main(["hop", "--config",
               write_config(tmp_path, {"params": {"V0": -0.2}}),
               "--out", str(out), "--seed", "0"])
    assert rc == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert abs(summary["eta_percent"]) < 0.1
    log = (out / "run_log.csv").read_text().splitlines()
    assert log[0] == "t,hop_index,phase,U_ff,U_fb,U,q_com,v_com,q_com_d,v_com_d"
    assert len(log) > 300
    assert (out / "plan.json").exists()


def test_multihop_scenario(tmp_path):
    out = tmp_path / "mh"
    rc = main(["multihop", "--config",
               write_config(tmp_path, {"params": {"V0": -0.2, "n_hops": 2}}),
               "--out", str(out)])
    assert rc == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["etas_percent"]) == 2


def test_impact_sweep_scenario(tmp_path):
    out = tmp_path / "sweep"
    rc = main(["impact_sweep", "--config",
               write_config(tmp_path, {
                   "params": {"velocities": [0.0, -0.2], "trials": 1},
               }),
               "--out", str(out)])
    assert rc == EXIT_OK
    rows = (out / "sweep.csv").read_text().splitlines()
    assert rows[0] == "V0,mode,trial,eta_pos,err_vel"
    assert len(rows) == 1 + 2 * 2  # 2 velocities x 2 modes x 1 trial


def test_foot_sweep_scenario(tmp_path):
    out = tmp_path / "feet"
    rc = main(["foot_sweep", "--config",
               write_config(tmp_path, {
                   "params": {"sides_cm": [1.0, 5.0], "velocities": [-0.2]},
               }),
               "--out", str(out)])
    assert rc == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["all_feasible"] is True


def test_run_reproducibility(tmp_path):
    cfg = write_config(tmp_path, {"params": {"V0": -0.5}})
    out1, out2 = tmp_path / "a", tmp_path / "b"
    main(["hop", "--config", cfg, "--out", str(out1), "--seed", "7"])
    main(["hop", "--config", cfg, "--out", str(out2), "--seed", "7"])
    s1 = json.loads((out1 / "summary.json").read_text())
    s2 = json.loads((out2 / "summary.json").read_text())
    for key in ("eta_percent", "err_vel", "period"):
        assert s1[key] == s2[key]


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def test_report_empty_dir_is_an_error(tmp_path):
    with pytest.raises(FileNotFoundError, match="no artifacts"):
        report(tmp_path)


def test_report_single_run(tmp_path):
    out = tmp_path / "hop"
    main(["hop", "--config", write_config(tmp_path, {"params": {"V0": -0.2}}),
          "--out", str(out)])
    text = report(tmp_path, tmp_path / "rep")
    assert "hop" in text
    assert (tmp_path / "rep" / "report.md").exists()
    rows = (tmp_path / "rep" / "report.csv").read_text().splitlines()
    assert len(rows) == 2


def test_report_cli_exit_on_missing(tmp_path):
    rc = main(["report", "--artifacts", str(tmp_path / "nope")])
    assert rc == EXIT_CONFIG


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "granhop.cli", "report", "--artifacts", "/nonexistent"],
        capture_output=True, text=True,
    )
    assert proc.returncode == EXIT_CONFIG
