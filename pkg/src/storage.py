"""
Artifact storage for runs.
Weight schedules (binary + JSON sidecar), trajectory CSVs, metrics JSON,
run manifests and comparison tables. Every writer creates parent directories.
"""

import hashlib
import json
import struct
from pathlib import Path
from typing import Any, List, Sequence, Union

import numpy as np

from src.logger import logger
from src.models import (
    BasisSpec,
    ComparisonRow,
    Metrics,
    RunManifest,
    TrajectoryRecord,
    VoltageProfile,
    WeightSchedule,
)


class StorageError(Exception):
    """Custom exception for artifact storage errors."""
    pass


PathLike = Union[str, Path]

SCHEDULE_MAGIC = b"RNQGWSCH"
SCHEDULE_VERSION = 1
# magic, version, n_state, count, horizon; all little-endian
_HEADER = struct.Struct("<8sHHII")
_DIGEST_SIZE = 32


def _prepare(path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _dump_json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


class ArtifactStore:
    """Reads and writes run artifacts on the local filesystem."""

    def __init__(self):
        """Initialize artifact store."""
        logger.info("Artifact store initialized")

    # ===== Weight schedules =====

    @staticmethod
    def sidecar_path(path: PathLike) -> Path:
        return Path(path).with_suffix(".json")

    def save_schedule(self, schedule: WeightSchedule, path: PathLike) -> Path:
        """
        Write a schedule as binary weights plus a JSON sidecar.

        Layout: header (magic, version, n_state, count, horizon), then
        (horizon+1) x count float64 little-endian weights with row k = W_k,
        then the SHA-256 of everything before it.

        Args:
            schedule: Trained schedule
            path: Binary file path; the sidecar goes next to it with a .json suffix

        Returns:
            Path of the binary file
        """
        path = _prepare(path)
        weights = np.ascontiguousarray(schedule.weights_by_step, dtype="<f8")
        header = _HEADER.pack(
            SCHEDULE_MAGIC, SCHEDULE_VERSION, schedule.basis.n_state, schedule.basis.count, schedule.horizon
        )
        body = header + weights.tobytes()
        payload = body + hashlib.sha256(body).digest()
        path.write_bytes(payload)

        sidecar = {
            "format_version": SCHEDULE_VERSION,
            "basis": {"degree": schedule.basis.degree, "terms": [list(t) for t in schedule.basis.terms]},
            "domain": [list(b) for b in schedule.domain],
            "seed": schedule.seed,
            "horizon": schedule.horizon,
            "eta": schedule.eta,
            "converged": schedule.converged,
            "mode": schedule.mode,
            "dt": schedule.dt,
            "deltas": list(schedule.deltas),
            "resampled": schedule.resampled,
            "sha256": hashlib.sha256(payload).hexdigest(),
        }
        self.sidecar_path(path).write_text(_dump_json(sidecar))
        logger.info("Weight schedule saved", path=str(path), horizon=schedule.horizon,
                    count=schedule.basis.count, converged=schedule.converged)
        return path

    def load_schedule(self, path: PathLike) -> WeightSchedule:
        """
        Read a schedule written by save_schedule.

        Raises:
            StorageError: missing files, bad magic/version, checksum or shape mismatch
        """
        path = Path(path)
        sidecar_path = self.sidecar_path(path)
        try:
            payload = path.read_bytes()
            sidecar = json.loads(sidecar_path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise StorageError(f"cannot read schedule {path}: {e}")

        if len(payload) < _HEADER.size + _DIGEST_SIZE:
            raise StorageError(f"schedule {path} is truncated")
        body, digest = payload[:-_DIGEST_SIZE], payload[-_DIGEST_SIZE:]
        if hashlib.sha256(body).digest() != digest:
            raise StorageError(f"schedule {path} fails its checksum")

        magic, version, n_state, count, horizon = _HEADER.unpack_from(body)
        if magic != SCHEDULE_MAGIC:
            raise StorageError(f"{path} is not a weight schedule")
        if version != SCHEDULE_VERSION:
            raise StorageError(f"unsupported schedule version {version}")

        data = body[_HEADER.size:]
        expected = (horizon + 1) * count * 8
        if len(data) != expected:
            raise StorageError(f"schedule {path} holds {len(data)} weight bytes, expected {expected}")
        weights = np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(horizon + 1, count)

        try:
            basis = BasisSpec(degree=sidecar["basis"]["degree"],
                              terms=tuple(tuple(t) for t in sidecar["basis"]["terms"]))
            if basis.count != count or basis.n_state != n_state:
                raise StorageError("sidecar basis does not match the binary header")
            schedule = WeightSchedule(
                weights_by_step=weights,
                horizon=horizon,
                basis=basis,
                domain=tuple(tuple(b) for b in sidecar["domain"]),
                eta=sidecar["eta"],
                seed=sidecar["seed"],
                converged=sidecar["converged"],
                mode=sidecar.get("mode", "greedy"),
                dt=sidecar["dt"],
                deltas=tuple(sidecar.get("deltas", ())),
                resampled=sidecar.get("resampled", False),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise StorageError(f"invalid schedule sidecar {sidecar_path}: {e}")

        logger.info("Weight schedule loaded", path=str(path), horizon=horizon, count=count)
        return schedule

    # ===== Trajectories and metrics =====

    @staticmethod
    def _columns(prefix: str, width: int) -> List[str]:
        if width == 1 and prefix in ("u", "w"):
            return [prefix]
        return [f"{prefix}{i + 1}" for i in range(width)]

    def write_trajectory_csv(self, record: TrajectoryRecord, path: PathLike) -> Path:
        """One row per recorded sample, 17 significant digits."""
        path = _prepare(path)
        header = (["t"]
                  + self._columns("x", record.states.shape[1])
                  + self._columns("u", record.inputs.shape[1])
                  + self._columns("w", record.disturbances.shape[1])
                  + self._columns("v", record.noises.shape[1])
                  + self._columns("y", record.outputs.shape[1]))
        table = np.column_stack([
            record.times, record.states, record.inputs, record.disturbances, record.noises, record.outputs,
        ])
        with open(path, "w", newline="\n") as handle:
            np.savetxt(handle, table, fmt="%.17g", delimiter=",", header=",".join(header), comments="")
        logger.info("Trajectory written", path=str(path), rows=len(record))
        return path

    def write_voltage_csv(self, profile: VoltageProfile, path: PathLike) -> Path:
        path = _prepare(path)
        table = np.column_stack([
            profile.times, profile.current, profile.current_rate, profile.motor_speed, profile.voltage,
        ])
        with open(path, "w", newline="\n") as handle:
            np.savetxt(handle, table, fmt="%.17g", delimiter=",",
                       header="t,current,current_rate,motor_speed,voltage", comments="")
        return path

    def write_metrics_json(self, metrics: Metrics, path: PathLike, case: Any, controller: str, seed: int) -> Path:
        path = _prepare(path)
        data = {"case": case, "controller": controller, "seed": seed, **metrics.model_dump()}
        path.write_text(_dump_json(data))
        return path

    # ===== Manifests =====

    def write_manifest(self, manifest: RunManifest, directory: PathLike) -> Path:
        path = _prepare(Path(directory) / "manifest.json")
        path.write_text(manifest.model_dump_json(indent=2) + "\n")
        return path

    # ===== Comparison tables =====

    _METRIC_COLUMNS = ("iae_median", "iae_iqr", "itae_median", "itae_iqr", "cef_median", "cef_iqr")

    def write_comparison_csv(self, rows: Sequence[ComparisonRow], path: PathLike) -> Path:
        path = _prepare(path)
        lines = [",".join(("case", "controller", "seeds", "failures") + self._METRIC_COLUMNS)]
        for row in rows:
            values = [f"{getattr(row, col):.17g}" for col in self._METRIC_COLUMNS]
            lines.append(",".join([str(row.case), row.controller.value, str(row.seeds), str(row.failures)] + values))
        path.write_text("\n".join(lines) + "\n")
        logger.info("Comparison table written", path=str(path), rows=len(rows))
        return path

    def format_comparison(self, rows: Sequence[ComparisonRow]) -> str:
        """Aligned text table."""
        header = ["case", "controller", "seeds", "IAE med", "IAE IQR", "ITAE med", "ITAE IQR", "CEF med", "CEF IQR"]
        body = [
            [str(row.case), row.controller.value, str(row.seeds)]
            + [f"{getattr(row, col):.4g}" for col in self._METRIC_COLUMNS]
            for row in rows
        ]
        widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
        render = lambda cells: "  ".join(c.rjust(w) if i > 1 else c.ljust(w)
                                         for i, (c, w) in enumerate(zip(cells, widths)))
        return "\n".join([render(header), render(["-" * w for w in widths])] + [render(r) for r in body])


# Global store instance
store = ArtifactStore()
