"""Command-line interface: subcommands, exit codes, artifacts."""

import json
import subprocess
import sys
from pathlib import Path

import pytest

SRC = Path(__file__).resolve().parent.parent / "src"

CONFIG = """
network.width = 5
network.concentration = border
network.lambda = 0.3
network.seed = 2
supervisors = 1
reporting_interval = 40
horizon = 200
trials = 2
"""

AXES = """
axis.supervisors = 0,1
axis.trials = 1
"""


def run_cli(*args, env_extra=None):
    import os

    env = dict(os.environ)
    env["PYTHONPATH"] = str(SRC)
    if env_extra:
        env.update(env_extra)
    return subprocess.run(
        [sys.executable, "-m", "ctxshare.cli", *args],
        capture_output=True,
        text=True,
        env=env,
    )


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(CONFIG)
    return path


def test_run_subcommand_writes_artifacts(tmp_path, config_file):
    out = tmp_path / "out"
    proc = run_cli("run", "--config", str(config_file), "--out", str(out))
    assert proc.returncode == 0, proc.stderr
    assert (out / "summary.json").exists()
    traces = [p for p in out.glob("run_*.csv") if "ledger" not in p.name]
    assert len(traces) == 2  # two trials
    payload = json.loads((out / "summary.json").read_text())
    assert len(payload["runs"]) == 2


def test_sweep_subcommand(tmp_path, config_file):
    axes = tmp_path / "axes.cfg"
    axes.write_text(AXES)
    out = tmp_path / "sweep-out"
    proc = run_cli("sweep", "--config", str(config_file), "--axes", str(axes), "--out", str(out))
    assert proc.returncode == 0, proc.stderr
    assert (out / "sweep_summary.csv").exists()
    payload = json.loads((out / "summary.json").read_text())
    assert len(payload["runs"]) == 2
    assert len(payload["sweep_summary"]) == 2


def test_report_subcommand_reemits(tmp_path, config_file):
    out = tmp_path / "out"
    assert run_cli("run", "--config", str(config_file), "--out", str(out)).returncode == 0
    out2 = tmp_path / "report-out"
    proc = run_cli("report", "--in", str(out), "--format", "csv", "--out", str(out2))
    assert proc.returncode == 0, proc.stderr
    assert (out2 / "report.csv").exists()
    proc = run_cli("report", "--in", str(out), "--format", "plots", "--out", str(out2))
    assert proc.returncode == 0, proc.stderr
    assert list(out2.glob("*.png"))


def test_config_error_exit_code_1(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("network.width = 1\n")
    proc = run_cli("run", "--config", str(bad))
    assert proc.returncode == 1
    assert "configuration error" in proc.stderr


def test_runtime_error_exit_code_2(tmp_path):
    proc = run_cli("report", "--in", str(tmp_path / "nope"), "--format", "csv")
    assert proc.returncode == 1  # missing summary is a configuration error
    # a genuinely broken input file is a runtime error
    out = tmp_path / "broken"
    out.mkdir()
    (out / "summary.json").write_text("{not json")
    proc = run_cli("report", "--in", str(out), "--format", "csv")
    assert proc.returncode == 2


def test_output_dir_env_override(tmp_path, config_file):
    target = tmp_path / "env-out"
    proc = run_cli(
        "run",
        "--config",
        str(config_file),
        env_extra={"CTXSHARE_OUTPUT_DIR": str(target)},
    )
    assert proc.returncode == 0, proc.stderr
    assert (target / "summary.json").exists()
