import json
import subprocess
import sys

import pytest
import yaml

from fjmpc import __version__
from fjmpc.cli import main
from fjmpc.sweep import MANIFEST

CONFIG = {
    "seed": 4,
    "network": {"generator": {"n_agents": 8, "density": 0.9}, "seed": 2},
    "model": {"beta": 4, "T": 3},
    "mpc": {"horizon": 3},
}


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump({**CONFIG, "output": str(tmp_path / "runs")}))
    return path


def _error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert err[0].startswith("error: ")
    return err[0]


def test_validate_ok(cfg, capsys):
    assert main(["validate", str(cfg)]) == 0
    assert "network valid" in capsys.readouterr().out


def test_validate_rejects_bad_config(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump({**CONFIG, "model": {"beta": 1, "T": 2, "rho": 1.5}}))
    assert main(["validate", str(path)]) == 1
    assert "ConfigError" in _error_line(capsys)


def test_missing_file_is_one_line(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "nope.yaml")]) == 1
    assert "cannot read" in _error_line(capsys)


def test_simulate_writes_report(cfg, tmp_path, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", str(cfg), "--out", str(out), "--u-s", "0.05"]) == 0
    assert (out / "summary.csv").exists() and (out / MANIFEST).exists()
    assert (out / "open_loop" / "trajectory.csv").exists()
    assert capsys.readouterr().out.startswith("policy,")


def test_simulate_overdraft_fails(cfg, tmp_path, capsys):
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "o"), "--u-l", "1.0"]) == 1
    assert "BudgetViolation" in _error_line(capsys)


@pytest.mark.parametrize("policy", ["naive", "rh"])
def test_design(cfg, tmp_path, policy, capsys):
    out = tmp_path / policy
    assert main(["--seed", "9", "design", str(cfg), "--policy", policy, "--out", str(out)]) == 0
    manifest = json.loads((out / MANIFEST).read_text())
    assert manifest["master_seed"] == 9
    assert capsys.readouterr().out.splitlines()[1].startswith(policy)


def test_sweep_and_report(cfg, tmp_path, capsys):
    spec = tmp_path / "sweep.yaml"
    spec.write_text("alpha: [0.2, 0.8]\npolicy: [naive, rh]\n")
    out = tmp_path / "sw"
    assert main(["sweep", str(cfg), str(spec), "--out", str(out), "--jobs", "1"]) == 0
    first = (out / "summary.csv").read_bytes()
    (out / "summary.csv").unlink()
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    assert (out / "summary.csv").read_bytes() == first


def test_sweep_rejects_bad_spec(cfg, tmp_path, capsys):
    spec = tmp_path / "sweep.yaml"
    spec.write_text("policy: [greedy]\n")
    assert main(["sweep", str(cfg), str(spec)]) == 1
    assert "sweep.policy" in _error_line(capsys)


def test_equilibrium_csv(cfg, tmp_path, capsys):
    out = tmp_path / "eq"
    assert main(["equilibrium", str(cfg), "--format", "csv", "--u-s", "0.0", "--u-l", "0.1",
                 "--out", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "agent_id,x_inf,u_inf,x_inf_forced,u_inf_forced"
    assert len(lines) == 9
    assert (out / "equilibrium.csv").read_text().splitlines() == lines


def test_equilibrium_design_violation(cfg, capsys):
    assert main(["equilibrium", str(cfg), "--u-s", "1.0", "--u-l", "1.0"]) == 1
    assert "DesignViolation" in _error_line(capsys)


def test_report_on_empty_dir(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 1
    _error_line(capsys)


def test_show_config_round_trips(cfg, capsys):
    assert main(["show-config", str(cfg), "--seed", "11"]) == 0
    shown = yaml.safe_load(capsys.readouterr().out)
    assert shown["seed"] == 11 and shown["mpc"]["horizon"] == 3


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as info:
        main(["design"])
    assert info.value.code == 2


def test_module_entry_point(cfg):
    proc = subprocess.run([sys.executable, "-m", "fjmpc", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and __version__ in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "fjmpc", "validate", str(cfg) + ".missing"],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert proc.stderr.count("\n") == 1 and proc.stderr.startswith("error: ConfigError:")
