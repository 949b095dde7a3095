import csv
import shutil
import subprocess
import time

import pytest

from swave.cli import EXPERIMENTS, main, resolve_params, ConfigError
from swave.presets import PRESETS, list_presets

SMALL = ["--K", "3", "--M", "7", "--T", "0.3"]


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("experiment", EXPERIMENTS)
def test_every_experiment_runs_quickly_on_small_tree(tmp_path, experiment):
    start = time.perf_counter()
    code = run(tmp_path, experiment, *SMALL)
    assert time.perf_counter() - start < 5.0
    # a three-step tree is too short to observe, so HUM stops on its precondition
    expected = {"condition-check": 1, "observability": 1, "hum": 3}.get(experiment, 0)
    assert code == expected
    if code in (0, 1):
        header, row = read_csv(tmp_path / "result.csv")
        assert header[:2] == ["experiment", "verdict"] and row[0] == experiment
        assert (tmp_path / "report.txt").read_text().startswith(f"experiment: {experiment}")


def test_outputs_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["duality-check", *SMALL, "--out", str(a)]) == 0
    assert main(["duality-check", *SMALL, "--out", str(b)]) == 0
    for name in ("result.csv", "trajectory.csv", "report.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_presets_listing(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    names = [line.split()[0] for line in out.strip().splitlines()]
    assert names == sorted(names) == sorted(PRESETS)
    assert list_presets() == out


@pytest.mark.parametrize("preset", sorted(PRESETS))
def test_each_preset_condition_check(tmp_path, preset):
    code = run(tmp_path, "condition-check", "--preset", preset)
    # the short-horizon preset has T below the critical time and is expected to fail
    assert code == (1 if PRESETS[preset]["T"] <= 8 else 0)
    header = read_csv(tmp_path / "weights.csv")[0]
    assert header == ["t", "x", "ell", "theta", "Psi", "A", "B", "c11"]


def test_constant_weight_is_precondition_error(tmp_path, capsys):
    assert run(tmp_path, "condition-check", "--alpha", "0") == 3
    assert "critical point" in capsys.readouterr().err


def test_parse_errors(tmp_path):
    assert main(["no-such-experiment"]) == 2
    assert run(tmp_path, "gamma0", "--preset", "missing") == 2
    assert run(tmp_path, "gamma0", "--K", "0") == 2
    assert run(tmp_path, "gamma0", "--K", "16", "--M", "200") == 2
    assert run(tmp_path, "gamma0", "--budget", "100000") == 2
    assert run(tmp_path, "gamma0", "--gamma0", "{top}") == 2


def test_cfl_violation_is_precondition_error(tmp_path):
    assert run(tmp_path, "duality-check", "--K", "2", "--M", "7", "--T", "1") == 3


def test_ini_config(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[swave]\nK = 4\nM = 5\nT = 0.4\nseed = 7\n")
    params = resolve_params(None, str(cfg), {"M": 6}, "duality-check")
    assert (params["K"], params["M"], params["T"], params["seed"]) == (4, 6, 0.4, 7)
    bad = tmp_path / "bad.ini"
    bad.write_text("[swave]\nK = four\n")
    with pytest.raises(ConfigError):
        resolve_params(None, str(bad), {})
    assert main(["gamma0", "--config", str(bad), "--out", str(tmp_path)]) == 2
    broken = tmp_path / "broken.ini"
    broken.write_text("K = 4\n")
    assert main(["gamma0", "--config", str(broken), "--out", str(tmp_path)]) == 2


def test_trajectory_header(tmp_path):
    assert run(tmp_path, "duality-check", *SMALL) == 0
    assert read_csv(tmp_path / "trajectory.csv")[0] == ["level", "node", "x_index", "y", "yhat", "Z", "Zhat"]


@pytest.mark.skipif(shutil.which("swave") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["swave", "gamma0", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "Gamma0 = {right}" in proc.stdout
