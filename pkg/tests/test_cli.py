"""End-to-end tests for the command-line interface."""

import json

import numpy as np
import pytest

import main
from src.config import ConfigError
from src.controllers import MissingSchedule
from src.riccati import NoStabilizingSolution
from src.simulate import IntegrationFailure, NonFiniteState


@pytest.fixture
def short_config_file(tmp_path):
    path = tmp_path / "short.json"
    path.write_text(json.dumps({
        "sim": {"t_end": 1.0},
        "train": {"horizon": 5, "eta": 30, "degree": 2},
    }))
    return str(path)


def run_cli(*argv):
    return main.main([str(a) for a in argv])


class TestSimulate:

    def test_case_one_writes_artifacts(self, tmp_path, short_config_file, capsys):
        out = tmp_path / "run"
        code = run_cli("simulate", "--case", 1, "--controller", "sdre", "--seed", 7,
                       "--config", short_config_file, "--out", out)
        assert code == main.EXIT_OK

        trajectory = out / "trajectory_case1_sdre_seed7.csv"
        lines = trajectory.read_text().splitlines()
        assert lines[0].startswith("t,x1,x2,x3,x4,u")
        assert len(lines) == 1 + 101

        scores = json.loads((out / "metrics_case1_sdre_seed7.json").read_text())
        assert scores["seed"] == 7
        assert scores["iae"] > 0

        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["seeds"] == [7]
        assert manifest["finished_at"] is not None
        assert len(manifest["config_sha256"]) == 64
        assert "IAE" in capsys.readouterr().out

    def test_voltage_files_are_per_run(self, tmp_path):
        path = tmp_path / "motor.json"
        path.write_text(json.dumps({
            "plant": {"motor": {"l_m": 0.002, "r_m": 1.5, "k_e": 0.02, "k_t": 0.02, "n_g": 1.0}},
            "sim": {"t_end": 0.2},
        }))
        out = tmp_path / "run"
        for seed in (1, 2):
            assert run_cli("simulate", "--case", 2, "--seed", seed, "--config", path, "--out", out) == main.EXIT_OK
        first = out / "voltage_case2_sdre_seed1.csv"
        second = out / "voltage_case2_sdre_seed2.csv"
        assert first.exists() and second.exists()
        assert first.read_text().splitlines()[0] == "t,current,current_rate,motor_speed,voltage"
        assert first.read_text() != second.read_text()

    def test_rejects_unknown_case(self, tmp_path):
        assert run_cli("simulate", "--case", 9, "--out", tmp_path) == main.EXIT_USAGE

    def test_approximate_controller_needs_schedule(self, tmp_path, short_config_file, capsys):
        code = run_cli("simulate", "--controller", "rnqg-approx", "--config", short_config_file, "--out", tmp_path)
        assert code == main.EXIT_USAGE
        assert "train" in capsys.readouterr().err

    def test_invalid_config(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"sim": {"tend": 1.0}}))
        assert run_cli("simulate", "--config", path, "--out", tmp_path / "run") == main.EXIT_USAGE
        assert "sim.tend" in capsys.readouterr().err


class TestTrain:

    def test_too_few_samples(self, tmp_path):
        path = tmp_path / "tiny.json"
        path.write_text(json.dumps({"train": {"horizon": 3, "eta": 5}}))
        code = run_cli("train", "--controller", "sdre-approx", "--config", path, "--out", tmp_path / "run")
        assert code == main.EXIT_USAGE

    def test_training_is_reproducible(self, tmp_path, short_config_file):
        for name in ("a", "b"):
            code = run_cli("train", "--controller", "sdre-approx", "--config", short_config_file,
                           "--out", tmp_path / name)
            assert code == main.EXIT_OK
        first = (tmp_path / "a" / "schedule_sdre-approx.bin").read_bytes()
        second = (tmp_path / "b" / "schedule_sdre-approx.bin").read_bytes()
        assert first == second
        assert (tmp_path / "a" / "schedule_sdre-approx.json").exists()

    def test_trained_schedule_drives_simulation(self, tmp_path, short_config_file):
        out = tmp_path / "run"
        assert run_cli("train", "--config", short_config_file, "--out", out) == main.EXIT_OK
        assert (out / "schedule_rnqg-approx.bin").exists()
        code = run_cli("simulate", "--controller", "sdre-approx", "--config", short_config_file,
                       "--out", out, "--seed", 1)
        assert code == main.EXIT_OK
        assert (out / "trajectory_case1_sdre-approx_seed1.csv").exists()


class TestCompare:

    def test_empty_seed_list(self, tmp_path, short_config_file):
        code = run_cli("compare", "--seeds", "", "--config", short_config_file, "--out", tmp_path)
        assert code == main.EXIT_USAGE

    def test_single_pair(self, tmp_path, short_config_file, capsys):
        out = tmp_path / "cmp"
        code = run_cli("compare", "--cases", "2", "--controllers", "sdre", "--seeds", "0,1",
                       "--config", short_config_file, "--out", out, "--jobs", 1)
        assert code == main.EXIT_OK
        lines = (out / "comparison.csv").read_text().splitlines()
        assert len(lines) == 2
        assert lines[1].startswith("2,sdre,2,0,")
        assert (out / "comparison.txt").exists()
        assert "Comparison over 2 seeds" in capsys.readouterr().out

    def test_unknown_case(self, tmp_path):
        assert run_cli("compare", "--cases", "4", "--seeds", "0", "--out", tmp_path) == main.EXIT_USAGE


class TestGain:

    def test_gain_at_origin(self, capsys):
        assert run_cli("gain", "--state", "0,0,0,0", "--controller", "rnqg") == main.EXIT_OK
        result = json.loads(capsys.readouterr().out)
        assert result["controller"] == "rnqg"
        assert np.asarray(result["K"]).shape == (1, 4)
        assert np.asarray(result["P"]).shape == (4, 4)
        assert result["diagnostics"]["closed_loop_stable"]

    @pytest.mark.parametrize("state", ["0,abc,0,0", "0,0", "nan,0,0,0"])
    def test_malformed_state(self, state):
        assert run_cli("gain", "--state", state) == main.EXIT_USAGE


class TestCareSolve:

    def test_double_integrator(self, tmp_path, capsys):
        problem = tmp_path / "problem.json"
        problem.write_text(json.dumps({"A": [[0, 1], [0, 0]], "B": [[0], [1]], "Q": [[1, 0], [0, 1]], "R": [[1]]}))
        assert run_cli("care-solve", problem) == main.EXIT_OK
        result = json.loads(capsys.readouterr().out)
        root3 = np.sqrt(3.0)
        np.testing.assert_allclose(result["P"], [[root3, 1.0], [1.0, root3]], atol=1e-9)
        assert result["stable"]

    def test_missing_matrix(self, tmp_path):
        problem = tmp_path / "problem.json"
        problem.write_text(json.dumps({"A": [[0.0]], "B": [[1.0]]}))
        assert run_cli("care-solve", problem) == main.EXIT_USAGE

    def test_unstabilizable(self, tmp_path):
        problem = tmp_path / "problem.json"
        problem.write_text(json.dumps({"A": [[1, 0], [0, -1]], "B": [[0], [1]], "Q": [[1, 0], [0, 1]], "R": [[1]]}))
        assert run_cli("care-solve", problem) == main.EXIT_NUMERICAL


def test_no_command_prints_help(capsys):
    assert main.main([]) == main.EXIT_OK
    assert "simulate" in capsys.readouterr().out


@pytest.mark.parametrize("error, code", [
    (ConfigError("bad"), main.EXIT_USAGE),
    (MissingSchedule("none"), main.EXIT_USAGE),
    (NoStabilizingSolution("unstable"), main.EXIT_NUMERICAL),
    (NonFiniteState("inf"), main.EXIT_NUMERICAL),
    (IntegrationFailure("step size"), main.EXIT_NUMERICAL),
    (np.linalg.LinAlgError("singular matrix"), main.EXIT_NUMERICAL),
    (ValueError("bad value"), main.EXIT_USAGE),
    (RuntimeError("boom"), main.EXIT_FAILURE),
])
def test_exit_codes(error, code):
    assert main.exit_code_for(error) == code
