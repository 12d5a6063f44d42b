"""Command-line workflows: artifacts, exit codes, reproducibility."""

import json

import numpy as np
import pytest

from dopf import cli


def run_cli(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def instance_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("inst")
    code = run_cli(
        "gen", "--seed", "5", "--out", str(out), "--buses", "3", "--houses", "3",
        "--generators", "2", "--n", "16", "--model", "dc", "--pv", "0",
        "--battery", "0", "--shiftables", "1",
    )
    assert code == cli.EXIT_OK
    return out


def test_gen_artifacts(instance_dir):
    for name in ("network.json", "load_profile.csv", "manifest.json"):
        assert (instance_dir / name).exists()
    man = json.loads((instance_dir / "manifest.json").read_text())
    assert man["seed"] == 5
    assert man["derived"]["houses"] == 3
    csv = (instance_dir / "load_profile.csv").read_text().strip().splitlines()
    assert csv[0] == "t,kw"
    assert len(csv) == 17


def test_gen_reproducible(tmp_path, instance_dir):
    out2 = tmp_path / "again"
    code = run_cli(
        "gen", "--seed", "5", "--out", str(out2), "--buses", "3", "--houses", "3",
        "--generators", "2", "--n", "16", "--model", "dc", "--pv", "0",
        "--battery", "0", "--shiftables", "1",
    )
    assert code == cli.EXIT_OK
    assert (out2 / "network.json").read_text() == \
        (instance_dir / "network.json").read_text()


def test_solve_and_warm_restart(tmp_path, instance_dir):
    run1 = tmp_path / "run1"
    code = run_cli("solve", "--instance", str(instance_dir / "network.json"),
                   "--out", str(run1))
    assert code == cli.EXIT_OK
    summary = json.loads((run1 / "summary.json").read_text())
    assert summary["converged"] is True
    assert summary["r_p"] < 1e-4 and summary["r_d"] < 1e-4
    sol = json.loads((run1 / "solution.json").read_text())
    assert np.asarray(sol["y"]).ndim == 3
    res = (run1 / "residuals.csv").read_text().strip().splitlines()
    assert len(res) == summary["iterations"] + 1

    run2 = tmp_path / "run2"
    code = run_cli("solve", "--instance", str(instance_dir / "network.json"),
                   "--warm-from", str(run1 / "solution.json"), "--out", str(run2))
    assert code == cli.EXIT_OK
    warm = json.loads((run2 / "summary.json").read_text())
    assert warm["iterations"] <= 2
    assert warm["objective_dollars"] == pytest.approx(
        summary["objective_dollars"], rel=5e-2)


def test_two_stage_command(tmp_path, instance_dir):
    out = tmp_path / "ts"
    code = run_cli("two-stage", "--instance", str(instance_dir / "network.json"),
                   "--method", "rd", "--out", str(out))
    assert code == cli.EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["method"] == "RD"
    assert rep["converged"] is True
    lines = (out / "summary.csv").read_text().strip().splitlines()
    assert lines[0] == "method,cost_delta_pct,charge_delta_pct"


def test_uncertainty_command(tmp_path):
    inst = tmp_path / "pv_inst"
    code = run_cli(
        "gen", "--seed", "6", "--out", str(inst), "--buses", "3", "--houses", "3",
        "--generators", "2", "--n", "16", "--model", "dc", "--pv", "1",
        "--battery", "0", "--shiftables", "1",
    )
    assert code == cli.EXIT_OK
    out = tmp_path / "unc"
    code = run_cli("uncertainty", "--instance", str(inst / "network.json"),
                   "--direction", "lower", "--pct", "20", "--out", str(out))
    assert code == cli.EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["direction"] == "lower"
    assert rep["solar_factor"] == pytest.approx(0.8)


def test_model_override(tmp_path, instance_dir):
    # the instance was generated DC; force AC physics at solve time
    out = tmp_path / "ac"
    code = run_cli("solve", "--instance", str(instance_dir / "network.json"),
                   "--model", "ac", "--out", str(out))
    assert code == cli.EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] is True


def test_exit_code_validation_bad_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"version": 1, "horizon": 4}))
    code = run_cli("solve", "--instance", str(bad), "--out", str(tmp_path / "o"))
    assert code == cli.EXIT_VALIDATION
    err = json.loads((tmp_path / "o" / "error.json").read_text())
    assert err["error"] is True and err["code"] == cli.EXIT_VALIDATION


def test_exit_code_io_missing_file(tmp_path):
    code = run_cli("solve", "--instance", str(tmp_path / "nope.json"),
                   "--out", str(tmp_path / "o"))
    assert code == cli.EXIT_IO


def test_exit_code_no_convergence(tmp_path, instance_dir):
    out = tmp_path / "nc"
    code = run_cli("solve", "--instance", str(instance_dir / "network.json"),
                   "--max-iter", "1", "--out", str(out))
    assert code == cli.EXIT_NO_CONVERGENCE
    # artifacts are still written for inspection
    assert (out / "solution.json").exists()
    assert (out / "residuals.csv").exists()


def test_exit_code_io_unwritable(tmp_path, instance_dir):
    # output path routed through an existing regular file cannot be created
    blocker = tmp_path / "file.txt"
    blocker.write_text("x")
    code = run_cli("solve", "--instance", str(instance_dir / "network.json"),
                   "--max-iter", "1", "--out", str(blocker / "sub"))
    assert code == cli.EXIT_IO


def test_bad_warm_file(tmp_path, instance_dir):
    code = run_cli("solve", "--instance", str(instance_dir / "network.json"),
                   "--warm-from", str(tmp_path / "missing.json"),
                   "--out", str(tmp_path / "o"))
    assert code == cli.EXIT_IO
