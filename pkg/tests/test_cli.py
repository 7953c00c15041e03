import json
import subprocess
import sys
from pathlib import Path

import pytest

from circuitpad.cli import main

TINY_CONFIG = """\
seed: 4
n_sessions: 40
sites:
  count: 4
  cell_count_range: [16, 24]
strategy:
  kind: strawman
experiment:
  sessions_per_class: 60
  grid: [[1.0, 0.5]]
  game_trials: 40
  game_learning_traces: 20
"""


@pytest.fixture()
def cfg_file(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(TINY_CONFIG)
    return path


def test_cli_entrypoint_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "circuitpad.cli", "--help"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "simulate" in proc.stdout


def test_simulate_writes_dataset(cfg_file, tmp_path, capsys):
    out = tmp_path / "data"
    rc = main(["simulate", "--config", str(cfg_file), "--out", str(out)])
    assert rc == 0
    assert (out / "traces.jsonl").exists()
    assert (out / "sessions.jsonl").exists()
    assert (out / "manifest.json").exists()
    first = (out / "traces.jsonl").read_text().splitlines()[0]
    rec = json.loads(first)
    assert list(rec.keys()) == [
        "run_id", "session_id", "circuit_id", "purpose", "t", "dir", "cmd", "pad",
    ]


def test_simulate_refuses_overwrite_without_force(cfg_file, tmp_path):
    out = tmp_path / "data"
    assert main(["simulate", "--config", str(cfg_file), "--out", str(out)]) == 0
    assert main(["simulate", "--config", str(cfg_file), "--out", str(out)]) == 1
    assert (
        main(["simulate", "--config", str(cfg_file), "--out", str(out), "--force"]) == 0
    )


def test_defend_then_attack_pipeline(cfg_file, tmp_path):
    data = tmp_path / "data"
    padded = tmp_path / "padded"
    results = tmp_path / "results"
    assert main(["simulate", "--config", str(cfg_file), "--out", str(data)]) == 0
    assert main(
        ["defend", "--config", str(cfg_file), "--dataset", str(data), "--out", str(padded)]
    ) == 0
    assert (padded / "traces.jsonl").exists()
    assert main(
        ["attack", "--config", str(cfg_file), "--dataset", str(padded), "--out", str(results)]
    ) == 0
    lines = (results / "results.csv").read_text().splitlines()
    assert lines[0].startswith("experiment,scenario,task,classifier")
    assert len(lines) > 1
    # strawman dataset triggers the pairwise tasks
    assert any("fake-hsdir-vs-hsdir" in line for line in lines)


def test_analytic_curves(cfg_file, tmp_path):
    out = tmp_path / "curves"
    rc = main(
        [
            "analytic", "--config", str(cfg_file), "--out", str(out),
            "--phi-grid", "0,1", "--c-grid", "0.5,0.7",
        ]
    )
    assert rc == 0
    lines = (out / "curves.csv").read_text().splitlines()
    assert lines[0] == "phi,c,accuracy,leakage"
    rows = {tuple(l.split(",")[:2]): l.split(",")[2:] for l in lines[1:]}
    acc, leak = rows[("1", "0.7")]
    assert float(acc) == pytest.approx(0.7)
    assert float(leak) == pytest.approx(0.0, abs=1e-9)


def test_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("rtt: -3\n")
    rc = main(["simulate", "--config", str(bad), "--out", str(tmp_path / "x")])
    assert rc == 2


def test_experiment_subcommand(cfg_file, tmp_path, capsys):
    out = tmp_path / "exp"
    rc = main(["experiment", "exp4", "--config", str(cfg_file), "--out", str(out)])
    assert rc == 0
    assert (out / "results.csv").exists()
    assert (out / "manifest.json").exists()
    captured = capsys.readouterr()
    assert "exp4" in captured.out


def test_game_subcommand(cfg_file, capsys):
    rc = main(
        ["game", "--config", str(cfg_file), "--trials", "30", "--learning-traces", "10",
         "--undefended"]
    )
    assert rc == 0
    assert "win rate" in capsys.readouterr().out


def test_seed_override_changes_manifest(cfg_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", "--config", str(cfg_file), "--out", str(a)])
    main(["simulate", "--config", str(cfg_file), "--seed", "99", "--out", str(b)])
    man_a = json.loads((a / "manifest.json").read_text())
    man_b = json.loads((b / "manifest.json").read_text())
    assert man_a["run_id"] != man_b["run_id"]
    assert man_b["seed"] == 99
