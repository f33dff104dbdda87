import json
import subprocess
import sys

import pytest

from dtrgp.cli import main

SMALL = {
    "dgp": {"n": 150},
    "budget": {"n_initial": 10, "n_ei": 4},
    "gp": {"n_candidates": 256, "tune": {"n_restarts": 2}},
    "sim": {"population_size": 1000, "repeats": 2, "n_value_draws": 4},
    "bench": {"runs": 2, "estimator": "ipw"},
}


@pytest.fixture(scope="module")
def config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


@pytest.fixture(scope="module")
def pad_csv(tmp_path_factory, config):
    out = tmp_path_factory.mktemp("pad")
    assert main(["simulate", "--pad", "--n", "400", "--seed", "3", "--out", str(out)]) == 0
    return str(out / "compliance.csv")


def snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def run_twice(tmp_path, capsys, argv):
    outputs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main([*argv, "--out", str(out)]) == 0
        stdout = capsys.readouterr().out.replace(str(out), "<out>")
        outputs.append((stdout, snapshot(out)))
    assert outputs[0] == outputs[1]
    return outputs[0]


def test_oracle_never_treat(capsys):
    assert main(["oracle", "--setting", "2", "--w", "1", "--beta1", "0", "--beta2", "1"]) == 0
    assert float(capsys.readouterr().out) == 0.5


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "dtrgp.cli", "oracle", "--setting", "2", "--w", "1",
                          "--beta1", "0", "--beta2", "1", "--method", "quadrature"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and float(res.stdout) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["oracle", "--beta1", "0"],
    ["oracle", "--beta1", "0", "--beta2", "1", "--bogus"],
    ["simulate", "--setting", "4"],
    ["compliance-value", "--data", "x.csv", "--regime", "nope"],
])
def test_usage_errors_exit_one(argv, capsys):
    assert main(argv) == 1
    assert capsys.readouterr().err


def test_bad_inputs_exit_one(tmp_path, capsys):
    assert main(["optimize", "--data", str(tmp_path / "missing.csv")]) == 1
    (tmp_path / "bad.json").write_text("[1, 2]")
    assert main(["oracle", "--beta1", "0", "--beta2", "1", "--config", str(tmp_path / "bad.json")]) == 1


def test_convergence_failure_exits_two(tmp_path, pad_csv, capsys):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps({"mcmc": {"n_iter": 40, "burn_in": 20, "ess_min": 1000}}))
    assert main(["compliance-fit", "--data", pad_csv, "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_global_flags_before_or_after_subcommand(tmp_path, capsys):
    assert main(["--seed", "4", "--out", str(tmp_path / "a"), "simulate", "--n", "20"]) == 0
    assert main(["simulate", "--n", "20", "--seed", "4", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "dataset.csv").read_bytes() == (tmp_path / "b" / "dataset.csv").read_bytes()


def test_simulate_deterministic(tmp_path, capsys, config):
    _, files = run_twice(tmp_path, capsys, ["simulate", "--config", config, "--setting", "3", "--seed", "2"])
    lines = files["dataset.csv"].decode().splitlines()
    assert len(lines) == 151


def test_optimize_deterministic(tmp_path, capsys, config):
    stdout, files = run_twice(tmp_path, capsys, ["optimize", "--config", config, "--seed", "5"])
    assert set(files) == {"trace.json", "trace.csv", "trace.png"}
    assert json.loads(stdout)["budget_used"] <= 14


def test_characterize_deterministic(tmp_path, capsys, config):
    stdout, files = run_twice(tmp_path, capsys, ["characterize", "--config", config, "--resolution", "12"])
    assert set(files) == {"grid.csv", "grid.json", "contour.svg", "contour.png"}
    doc = json.loads(stdout)
    assert doc["l1"] <= doc["l2"]


def test_bench_deterministic(tmp_path, capsys, config):
    stdout, files = run_twice(tmp_path, capsys, ["bench", "--config", config, "--seed", "7"])
    assert {"summary.json", "runs.csv", "study.png"} <= set(files)
    assert json.loads(stdout)["runs"] == 2


def test_compliance_pipeline_deterministic(tmp_path, capsys, config, pad_csv):
    _, fit = run_twice(tmp_path / "fit", capsys, ["compliance-fit", "--config", config, "--data", pad_csv])
    assert {"compliance_draws.csv", "outcome_draws.csv", "diagnostics.json"} <= set(fit)
    post = tmp_path / "fit" / "run0"
    argv = ["compliance-value", "--config", config, "--data", pad_csv, "--posteriors", str(post),
            "--regime", "0,100", "--regime", "0.5,30"]
    stdout, files = run_twice(tmp_path / "val", capsys, argv)
    regimes = json.loads(stdout)["regimes"]
    assert len(regimes) == 2 and all(0 <= r["mean"] <= 1 for r in regimes)
    assert len(files["value_draws.csv"].decode().splitlines()) == 5
