"""Tests for artifact storage."""

import json

import numpy as np
import pytest

from src.models import ComparisonRow, ControllerKind, Metrics, RunManifest, WeightSchedule
from src.storage import SCHEDULE_MAGIC, StorageError, store
from src.value_approx import monomial_basis
from tests.conftest import constant_record


@pytest.fixture
def schedule(rng):
    basis = monomial_basis(4, 2)
    return WeightSchedule(
        weights_by_step=rng.standard_normal((6, basis.count)),
        horizon=5,
        basis=basis,
        domain=((-1.0, 1.0),) * 4,
        eta=40,
        seed=12,
        converged=False,
        mode="greedy",
        dt=0.01,
        deltas=(0.5, 0.4, 0.3, 0.2, 0.1, 0.0),
    )


def comparison_row(controller=ControllerKind.SDRE, iae=1.5):
    return ComparisonRow(
        case=2, controller=controller, seeds=10, failures=1,
        iae_median=iae, iae_iqr=0.1, itae_median=3.0, itae_iqr=0.2, cef_median=0.01, cef_iqr=0.001,
    )


class TestSchedules:

    def test_round_trip(self, schedule, tmp_path):
        path = store.save_schedule(schedule, tmp_path / "nested" / "schedule_sdre-approx.bin")
        assert path.read_bytes()[:8] == SCHEDULE_MAGIC
        assert store.sidecar_path(path).exists()

        loaded = store.load_schedule(path)
        np.testing.assert_array_equal(loaded.weights_by_step, schedule.weights_by_step)
        assert loaded.basis == schedule.basis
        assert (loaded.seed, loaded.eta, loaded.horizon) == (12, 40, 5)
        assert loaded.domain == schedule.domain
        assert loaded.deltas == schedule.deltas

    def test_resampled_flag_survives_saving(self, schedule, tmp_path):
        path = store.save_schedule(schedule.model_copy(update={"resampled": True}), tmp_path / "s.bin")
        assert store.load_schedule(path).resampled
        assert json.loads(store.sidecar_path(path).read_text())["resampled"] is True

    def test_saving_twice_is_byte_identical(self, schedule, tmp_path):
        first = store.save_schedule(schedule, tmp_path / "a.bin").read_bytes()
        second = store.save_schedule(schedule, tmp_path / "b.bin").read_bytes()
        assert first == second

    def test_corrupted_weights_fail_checksum(self, schedule, tmp_path):
        path = store.save_schedule(schedule, tmp_path / "s.bin")
        payload = bytearray(path.read_bytes())
        payload[40] ^= 0xFF
        path.write_bytes(bytes(payload))
        with pytest.raises(StorageError, match="checksum"):
            store.load_schedule(path)

    def test_truncated_file(self, schedule, tmp_path):
        path = store.save_schedule(schedule, tmp_path / "s.bin")
        path.write_bytes(path.read_bytes()[:10])
        with pytest.raises(StorageError):
            store.load_schedule(path)

    def test_missing_sidecar(self, schedule, tmp_path):
        path = store.save_schedule(schedule, tmp_path / "s.bin")
        store.sidecar_path(path).unlink()
        with pytest.raises(StorageError):
            store.load_schedule(path)

    def test_sidecar_basis_must_match(self, schedule, tmp_path):
        path = store.save_schedule(schedule, tmp_path / "s.bin")
        sidecar = json.loads(store.sidecar_path(path).read_text())
        sidecar["basis"] = {"degree": 2, "terms": [[2, 0], [1, 1], [0, 2]]}
        store.sidecar_path(path).write_text(json.dumps(sidecar))
        with pytest.raises(StorageError, match="header"):
            store.load_schedule(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(StorageError):
            store.load_schedule(tmp_path / "absent.bin")


class TestTables:

    def test_trajectory_csv(self, tmp_path):
        record = constant_record(theta=0.25, u=-1.0, samples=11)
        path = store.write_trajectory_csv(record, tmp_path / "trajectory.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "t,x1,x2,x3,x4,u,w,v1,v2,v3,v4,y1,y2,y3,y4"
        assert len(lines) == 12
        first = [float(v) for v in lines[1].split(",")]
        assert first[:2] == [0.0, 0.25]
        assert first[5] == -1.0

    def test_trajectory_csv_keeps_full_precision(self, tmp_path):
        record = constant_record(theta=np.pi, u=0.0, samples=2)
        path = store.write_trajectory_csv(record, tmp_path / "t.csv")
        assert float(path.read_text().splitlines()[1].split(",")[1]) == np.pi

    def test_metrics_json(self, tmp_path):
        path = store.write_metrics_json(Metrics(iae=1.0, itae=2.0, cef=3.0), tmp_path / "m.json", 1, "sdre", 7)
        assert json.loads(path.read_text()) == {
            "case": 1, "controller": "sdre", "seed": 7, "iae": 1.0, "itae": 2.0, "cef": 3.0,
        }

    def test_manifest(self, tmp_path):
        manifest = RunManifest(command="simulate", config_sha256="ab" * 32, code_version="1.0.0",
                               seeds=[3], output_dir=str(tmp_path))
        path = store.write_manifest(manifest, tmp_path)
        assert path.name == "manifest.json"
        data = json.loads(path.read_text())
        assert data["command"] == "simulate"
        assert data["seeds"] == [3]

    def test_comparison_csv(self, tmp_path):
        rows = [comparison_row(), comparison_row(ControllerKind.RNQG, iae=1.25)]
        lines = store.write_comparison_csv(rows, tmp_path / "comparison.csv").read_text().splitlines()
        assert lines[0] == "case,controller,seeds,failures,iae_median,iae_iqr,itae_median,itae_iqr,cef_median,cef_iqr"
        assert lines[2].startswith("2,rnqg,10,1,1.25,")
        assert len(lines) == 3

    def test_format_comparison(self):
        table = store.format_comparison([comparison_row(), comparison_row(ControllerKind.H2HINF)])
        lines = table.splitlines()
        assert len(lines) == 4
        assert lines[0].startswith("case")
        assert set(lines[1].replace(" ", "")) == {"-"}
        assert "h2hinf" in lines[3]
        assert len({len(line) for line in lines}) == 1
