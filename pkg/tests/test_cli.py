import hashlib
import json

import pandas as pd
import pytest

from cli import build_parser, main
from workbench.errors import ConfigError, ConstraintViolation, NumericGuardError
from workbench.experiment_runner import EXIT_CONFIG, EXIT_ERROR, EXIT_NUMERIC, exit_status_for


def read_manifest(out):
    return json.loads((out / "manifest.json").read_text())


def read_summary(out):
    return json.loads((out / "summary.json").read_text())


def test_chsh_scan(tmp_path):
    out = tmp_path / "chsh"
    assert main(["chsh-scan", "--theta-steps", "360", "--out", str(out)]) == 0
    summary = read_summary(out)
    assert summary["max_singlet"] == pytest.approx(2.5, abs=1e-9)
    assert summary["max_mixture"] == pytest.approx(2.0, abs=1e-12)
    frame = pd.read_csv(out / "chsh_scan.csv")
    assert list(frame.columns) == ["theta", "singlet", "mixture", "mixture_lhs"]
    assert len(frame) == 360


def test_dispersion_check_gap_table(tmp_path):
    out = tmp_path / "dispersion"
    assert main(["dispersion-check", "--d", "2,3,4", "--out", str(out)]) == 0
    gaps = pd.read_csv(out / "gap_table.csv")
    assert gaps["gap"].tolist() == pytest.approx([1.0, 2.0, 3.0])
    summary = read_summary(out)
    assert set(summary["extrapolated_dispersion"]) == {"x", "p", "x2", "kinetic"}
    assert summary["gaps"] == pytest.approx({"2": 1.0, "3": 2.0, "4": 3.0})


def test_invalid_trial_count_exits_with_config_status(tmp_path):
    out = tmp_path / "bad"
    assert main(["trials", "--model", "mixture", "--n", "0", "--out", str(out)]) == EXIT_CONFIG
    assert not (out / "trials.csv").exists()


def test_unknown_choice_is_rejected_by_the_parser():
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args(["trials", "--model", "telepathic"])
    assert info.value.code == 2


def test_trials_are_reproducible(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    argv = ["trials", "--model", "singlet", "--n", "5000", "--seed", "17"]
    assert main(argv + ["--out", str(first)]) == 0
    assert main(argv + ["--out", str(second), "--threads", "2"]) == 0
    body = (first / "trials.csv").read_bytes()
    assert b"\r\n" not in body
    assert body == (second / "trials.csv").read_bytes()
    manifest = read_manifest(first)
    assert manifest["artifacts"]["trials"]["sha256"] == hashlib.sha256(body).hexdigest()
    assert manifest["artifacts"]["trials"]["rows"] == 5000
    assert manifest["params"]["seed"] == 17
    assert manifest["status"] == 0
    assert "created" in manifest


def test_config_file_with_flag_override(tmp_path):
    path = tmp_path / "trials.env"
    path.write_text("MODEL=mixture\nN=1000\nDAT=true\n")
    out = tmp_path / "run"
    assert main(["trials", "--config", str(path), "--n", "10", "--out", str(out)]) == 0
    assert len(pd.read_csv(out / "trials.csv")) == 10
    assert (out / "trials.dat").read_text().startswith("# trial label A B")
    assert read_manifest(out)["params"]["model"] == "mixture"


def test_lhv_sim_smoke(tmp_path):
    out = tmp_path / "lhv"
    argv = ["lhv-sim", "--n", "5000", "--theta-steps", "5", "--settings", "5", "--out", str(out)]
    assert main(argv) == 0
    summary = read_summary(out)
    assert summary["violations"] == 0
    assert len(pd.read_csv(out / "lhv_correlation.csv")) == 5
    assert len(pd.read_csv(out / "lhv_bound_check.csv")) == 5


def test_bohm_evolve_single_wave(tmp_path):
    out = tmp_path / "bohm"
    argv = ["bohm-evolve", "--preset", "free-gaussian", "--points", "512", "--dt", "0.01", "--t-end", "0.2",
            "--save-every", "5", "--particles", "50", "--plots", "--out", str(out)]
    assert main(argv) == 0
    summary = read_summary(out)
    assert summary["steps"] == 20
    assert summary["crossings"] == 0
    assert abs(summary["norm"] - 1.0) < 1e-9
    trajectories = pd.read_csv(out / "trajectories.csv")
    assert list(trajectories.columns) == ["t", "particle", "x"]
    assert len(trajectories) == 5 * 50
    assert (out / "trajectories.html").exists()


def test_bohm_evolve_two_particle(tmp_path):
    out = tmp_path / "pair"
    argv = ["bohm-evolve", "--preset", "two-particle-entangled", "--points", "128", "--probes", "100",
            "--out", str(out)]
    assert main(argv) == 0
    report = read_summary(out)["factorization"]
    assert report["verdict"] == "nonlocal"
    assert report["witness"] is not None
    assert list(pd.read_csv(out / "velocity_1.csv").columns) == ["x", "y", "value"]


def test_exit_statuses():
    assert exit_status_for(ConfigError("bad", key="n")) == EXIT_CONFIG
    assert exit_status_for(NumericGuardError("drift")) == EXIT_NUMERIC
    assert exit_status_for(ConstraintViolation("loud", response=2.0)) == EXIT_NUMERIC
    assert exit_status_for(RuntimeError("other")) == EXIT_ERROR


def test_manifest_replays_the_same_run(tmp_path):
    first, replay = tmp_path / "a", tmp_path / "b"
    assert main(["trials", "--model", "mixture", "--n", "200", "--seed", "5", "--out", str(first)]) == 0
    assert main(["trials", "--config", str(first / "manifest.json"), "--out", str(replay)]) == 0
    assert (replay / "trials.csv").read_bytes() == (first / "trials.csv").read_bytes()
    original, replayed = read_manifest(first), read_manifest(replay)
    assert replayed["params"] == original["params"]
    assert replayed["units"] == original["units"]
    assert replayed["artifacts"]["trials"]["sha256"] == original["artifacts"]["trials"]["sha256"]


def test_manifest_from_another_subcommand_is_rejected(tmp_path):
    first = tmp_path / "chsh"
    assert main(["chsh-scan", "--theta-steps", "8", "--out", str(first)]) == 0
    out = tmp_path / "trials"
    assert main(["trials", "--config", str(first / "manifest.json"), "--out", str(out)]) == EXIT_CONFIG
    assert not (out / "trials.csv").exists()


def test_units_are_set_per_run_and_replayed(tmp_path):
    first, replay = tmp_path / "heavy", tmp_path / "again"
    argv = ["dispersion-check", "--d", "2", "--particles", "1", "--mass", "2", "--hbar", "0.5"]
    assert main(argv + ["--out", str(first)]) == 0
    assert read_manifest(first)["units"] == {"hbar": 0.5, "mass": 2.0}
    assert main(["dispersion-check", "--config", str(first / "manifest.json"), "--out", str(replay)]) == 0
    assert read_manifest(replay)["units"] == {"hbar": 0.5, "mass": 2.0}
    assert (replay / "dispersion.csv").read_bytes() == (first / "dispersion.csv").read_bytes()
