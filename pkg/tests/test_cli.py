import json
import subprocess
import sys

import pytest

from kfpbench.cli import run


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


def test_basis_check_writes_table_and_manifest(tmp_path):
    out = tmp_path / "b"
    assert run(["basis-check", "--modes", "6", "--nh", "80", "--out", str(out)]) == 0
    m = manifest(out)
    assert m["exit_code"] == 0 and m["config"]["N"] == 6
    lines = (out / "basis_check.csv").read_text().splitlines()
    assert lines[0] == "nu,eigen_residual,pairing_defect,tail"
    assert len(lines) == 13


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"N": 4, "N_h": 64, "tol": 1e-6}))
    out = tmp_path / "o"
    assert run(["basis-check", "--config", str(cfg), "--set", "N=5", "--out", str(out)]) == 0
    c = manifest(out)["config"]
    assert c["N"] == 5 and c["tol"] == 1e-6
    assert run(["basis-check", "--config", str(cfg), "--modes", "3", "--set", "N=5", "--out", str(out)]) == 0
    assert manifest(out)["config"]["N"] == 3


def test_usage_errors_exit_one(tmp_path, capsys):
    assert run(["no-such-command"]) == 1
    assert run(["spectrum", "--bogus-flag", "1", "--out", str(tmp_path / "x")]) == 1
    assert run(["spectrum", "--set", "novalue", "--out", str(tmp_path / "y")]) == 1
    assert run([]) == 1


def test_validation_errors_exit_two(tmp_path):
    out = tmp_path / "v"
    assert run(["spectrum", "--set", "k=0", "--out", str(out)]) == 2
    assert "ValidationError" in manifest(out)["error"]
    assert run(["spectrum", "--set", "unknown_key=1", "--out", str(out)]) == 2
    assert run(["spectrum", "--tol", "-1", "--out", str(out)]) == 2
    assert run(["mc", "--policy", "change_of_sign", "--traj", "10", "--out", str(out)]) == 2
    assert run(["bvp-solve", "--A", "scalar:-1", "--out", str(out)]) == 2


def test_numerical_failures_exit_three(tmp_path):
    out = tmp_path / "n"
    # N_h too small for the requested modes
    assert run(["basis-check", "--modes", "30", "--nh", "40", "--out", str(out)]) == 3
    assert "TruncationError" in manifest(out)["error"]
    # certificate above an impossible tolerance
    assert run(["bvp-solve", "--tol", "1e-300", "--out", str(out)]) == 3
    assert manifest(out)["error"] == "certificates exceed tolerance"


@pytest.mark.parametrize("argv,files", [
    (["bvp-solve", "--A", "partial:0.4", "--set", "q_points=5", "--set", "p_points=5"], ["field.csv", "modes.json"]),
    (["inhomogeneous", "--sign", "-1"], ["modes.json"]),
    (["resolvent-sweep", "--set", "n_lambda=3", "--n-q", "8", "--n-p", "8"], ["resolvent.csv"]),
    (["subelliptic", "--A", "identity", "--lmax", "20", "--set", "n_lambda=3", "--n-q", "8", "--n-p", "8"],
     ["sweep.csv", "sweep_refined.csv"]),
    (["spectrum", "--A", "scalar:0.5+0.5j", "--n-q", "8", "--n-p", "8"], ["spectrum.csv"]),
    (["semigroup", "--n-q", "6", "--n-p", "6", "--L", "2"], ["semigroup.csv", "smoothing.csv"]),
    (["airy", "--set", "n_grid=4", "--set", "n_p=32", "--set", "deltas=[0, 10]", "--set", "xi_max=5", "--set", "lmax=10"], ["modes.csv", "delta_source.csv"]),
    (["mc", "--traj", "500", "--T", "0.1", "--set", "hist_times=[0.1]"], ["mc_survival.csv", "mc_hist_t0.1.csv"]),
])
def test_each_command_runs(tmp_path, argv, files):
    out = tmp_path / "r"
    assert run(argv + ["--out", str(out)]) == 0
    m = manifest(out)
    assert m["exit_code"] == 0 and m["command"] == argv[0]
    for f in files:
        assert (out / f).exists()
        assert f in m["outputs"]


def test_mc_manifest_reproduces_run(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    argv = ["mc", "--traj", "700", "--T", "0.05", "--set", "hist_times=[0.05]", "--seed", "9"]
    assert run(argv + ["--out", str(a)]) == 0
    m = manifest(a)
    assert "PCG64" in m["rng"]["algorithm"]
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(m["config"]))
    assert run(["mc", "--config", str(cfg), "--out", str(b)]) == 0
    assert (a / "mc_survival.csv").read_text() == (b / "mc_survival.csv").read_text()
    assert (a / "mc_hist_t0.05.csv").read_text() == (b / "mc_hist_t0.05.csv").read_text()


def test_compare_small(tmp_path):
    out = tmp_path / "c"
    code = run(["compare", "--policy", "specular", "--traj", "5000", "--out", str(out)])
    assert code == 0
    s = manifest(out)["summary"]
    assert s["tv"] <= s["tv_threshold"]


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "kfpbench.cli", "basis-check", "--modes", "2", "--nh", "40",
                          "--out", str(tmp_path / "e")], capture_output=True)
    assert res.returncode == 0
    res = subprocess.run([sys.executable, "-m", "kfpbench.cli", "frobnicate"], capture_output=True)
    assert res.returncode == 1
