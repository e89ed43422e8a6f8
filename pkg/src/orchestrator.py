"""
Orchestrator for controller experiments.
Coordinates case runs, value-weight training, seed sweeps and gain queries,
and writes every artifact under the run's output directory.
"""

from concurrent.futures import ProcessPoolExecutor
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src import __version__
from src.config import ExperimentConfig, SolverSettings, parse_experiment_config
from src.controllers import MissingSchedule
from src.logger import logger
from src.models import (
    CareProblem,
    ComparisonRow,
    ControllerKind,
    GainSolution,
    RiccatiSolution,
    RunManifest,
    WeightSchedule,
)
from src.pendulum import build_from_config, motor_from_config, voltage_profile
from src.riccati import RiccatiSolver
from src.simulate import CASE_CONTROLLERS, SimulationError, run_case
from src.storage import store
from src.synthesis import Synthesizer
from src.value_approx import monomial_basis, robust_stage_cost, stage_cost, train_weights


def schedule_path(directory: Path, kind: ControllerKind) -> Path:
    return Path(directory) / f"schedule_{ControllerKind(kind).value}.bin"


def _run_seed(job: Tuple[int, str, int, Dict[str, Any], Optional[str]]) -> Tuple[int, str, int, Optional[Dict[str, float]], Optional[str]]:
    """
    One seed of a sweep; top-level so worker processes can import it.

    Returns:
        (case, controller, seed, metrics or None, error tag or None)
    """
    case_id, kind, seed, config_data, schedule_file = job
    config = parse_experiment_config(config_data)
    schedule = store.load_schedule(schedule_file) if schedule_file else None
    try:
        _, scores = run_case(case_id, ControllerKind(kind), seed, config, schedule)
    except SimulationError as e:
        logger.warning("Seed failed", case=case_id, controller=kind, seed=seed, error=str(e))
        return case_id, kind, seed, None, str(e)
    return case_id, kind, seed, scores.model_dump(), None


def _spread(values: List[float]) -> Tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    q1, median, q3 = np.percentile(values, [25.0, 50.0, 75.0])
    return float(median), float(q3 - q1)


class ExperimentOrchestrator:
    """Runs experiments described by an ExperimentConfig."""

    def __init__(self):
        """Initialize orchestrator."""
        logger.info("Experiment orchestrator initialized")

    # ===== Manifests =====

    def start_manifest(
        self,
        command: str,
        out_dir: Path,
        config_sha256: str,
        config_path: Optional[str] = None,
        seeds: Sequence[int] = (),
    ) -> RunManifest:
        """Record the run before any work happens."""
        manifest = RunManifest(
            command=command,
            config_path=config_path,
            config_sha256=config_sha256,
            code_version=__version__,
            seeds=list(seeds),
            output_dir=str(out_dir),
        )
        store.write_manifest(manifest, out_dir)
        return manifest

    def finish_manifest(self, manifest: RunManifest) -> RunManifest:
        finished = manifest.model_copy(update={"finished_at": datetime.utcnow()})
        store.write_manifest(finished, manifest.output_dir)
        return finished

    # ===== Schedules =====

    def require_schedule(self, kind: ControllerKind, schedule_dir: Path) -> Optional[str]:
        """
        Schedule file for an approximate controller.

        Returns:
            Path string, or None for exact controllers

        Raises:
            MissingSchedule: no trained schedule in schedule_dir
        """
        kind = ControllerKind(kind)
        if not kind.is_approximate:
            return None
        path = schedule_path(schedule_dir, kind)
        if not path.exists():
            raise MissingSchedule(
                f"no trained schedule for '{kind.value}' at {path}; run `train --controller {kind.value}` first"
            )
        return str(path)

    # ===== Commands =====

    def simulate(
        self,
        case_id: int,
        kind: ControllerKind,
        seed: int,
        config: ExperimentConfig,
        out_dir: Path,
        schedule_dir: Optional[Path] = None,
    ) -> Dict[str, Any]:
        """
        Run one benchmark case and write its trajectory and metrics.

        Returns:
            Summary with metrics and written paths

        Raises:
            ControllerFailure: partial trajectory is still written before re-raising
        """
        kind = ControllerKind(kind)
        out_dir = Path(out_dir)
        schedule_file = self.require_schedule(kind, schedule_dir or out_dir)
        schedule = store.load_schedule(schedule_file) if schedule_file else None

        stem = f"case{case_id}_{kind.value}_seed{seed}"
        trajectory_file = out_dir / f"trajectory_{stem}.csv"
        try:
            record, scores = run_case(case_id, kind, seed, config, schedule)
        except SimulationError as e:
            if getattr(e, "record", None) is not None and len(e.record) > 0:
                store.write_trajectory_csv(e.record, trajectory_file)
            raise

        paths = [
            store.write_trajectory_csv(record, trajectory_file),
            store.write_metrics_json(scores, out_dir / f"metrics_{stem}.json", case_id, kind.value, seed),
        ]
        motor = motor_from_config(config.plant)
        if motor is not None:
            paths.append(store.write_voltage_csv(voltage_profile(record, motor), out_dir / f"voltage_{stem}.csv"))

        logger.info("Simulation artifacts written", case=case_id, controller=kind.value, files=len(paths))
        return {"metrics": scores, "paths": paths, "samples": len(record)}

    def train(self, kind: ControllerKind, config: ExperimentConfig, out_dir: Path) -> Tuple[WeightSchedule, Path]:
        """
        Train value weights for an approximate controller and save the schedule.

        The rnqg-approx schedule folds the output penalty into its stage cost.
        """
        kind = ControllerKind(kind)
        if not kind.is_approximate:
            raise ValueError(f"controller '{kind.value}' does not use a weight schedule")

        plant, weights, _, _ = build_from_config(config)
        section = config.train
        if kind == ControllerKind.RNQG_APPROX:
            cost = robust_stage_cost(plant, weights, section.dt)
        else:
            cost = stage_cost(weights, section.dt)

        schedule = train_weights(
            plant,
            monomial_basis(plant.dim_state, section.degree),
            cost,
            horizon=section.horizon,
            eta=section.eta,
            domain=section.domain,
            seed=section.seed,
            mode=section.mode,
            resample=section.resample,
        )
        path = store.save_schedule(schedule, schedule_path(out_dir, kind))
        return schedule, path

    def compare(
        self,
        cases: Sequence[int],
        controllers: Sequence[ControllerKind],
        seeds: Sequence[int],
        config: ExperimentConfig,
        schedule_dir: Path,
        jobs: int = 1,
    ) -> List[ComparisonRow]:
        """
        Seed sweep over (case, controller) pairs reduced to medians and IQRs.

        Case 3 only admits the exact controllers; pairs outside a case's
        controller set are skipped. Failed seeds are counted, not scored.

        Raises:
            ValueError: empty seed list
            MissingSchedule: approximate controller without a trained schedule
        """
        if not seeds:
            raise ValueError("seeds: at least one seed is required")
        kinds = [ControllerKind(k) for k in controllers]
        pairs = [(c, k) for c in cases for k in kinds if k in CASE_CONTROLLERS.get(c, ())]
        if not pairs:
            raise ValueError("no (case, controller) pair to compare")

        schedule_files = {k: self.require_schedule(k, schedule_dir) for _, k in pairs}
        config_data = config.model_dump(mode="json")
        work = [(c, k.value, s, config_data, schedule_files[k]) for c, k in pairs for s in seeds]

        logger.info("Comparison started", pairs=len(pairs), seeds=len(seeds), jobs=jobs)
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_run_seed, work))
        else:
            results = [_run_seed(job) for job in work]

        rows = []
        for case_id, kind in pairs:
            scored = [r[3] for r in results if r[0] == case_id and r[1] == kind.value and r[3] is not None]
            failures = sum(1 for r in results if r[0] == case_id and r[1] == kind.value and r[3] is None)
            iae = _spread([m["iae"] for m in scored])
            itae = _spread([m["itae"] for m in scored])
            cef = _spread([m["cef"] for m in scored])
            rows.append(ComparisonRow(
                case=case_id,
                controller=kind,
                seeds=len(seeds),
                failures=failures,
                iae_median=iae[0], iae_iqr=iae[1],
                itae_median=itae[0], itae_iqr=itae[1],
                cef_median=cef[0], cef_iqr=cef[1],
            ))
        logger.info("Comparison finished", rows=len(rows), failures=sum(r.failures for r in rows))
        return rows

    def gain(self, state: np.ndarray, kind: ControllerKind, config: ExperimentConfig) -> GainSolution:
        """Synthesize the exact-scheme gain at one state."""
        kind = ControllerKind(kind)
        plant, weights, noise, _ = build_from_config(config)
        state = np.asarray(state, dtype=float)
        if state.shape != (plant.dim_state,):
            raise ValueError(f"state: expected {plant.dim_state} entries, got {state.size}")
        synth = Synthesizer(config.solver)
        coeffs = plant.sdc(state)
        if kind == ControllerKind.SDRE:
            return synth.sdre_gain(coeffs, weights)
        if kind == ControllerKind.H2HINF:
            return synth.h2hinf_gain(coeffs, weights)
        if kind == ControllerKind.RNQG:
            return synth.rnqg_gain(coeffs, weights, noise)
        raise ValueError(f"controller '{kind.value}' has no state-feedback gain; use sdre, h2hinf or rnqg")

    def care_solve(self, data: Dict[str, Any], solver: Optional[SolverSettings] = None) -> RiccatiSolution:
        """Solve a CARE given as a JSON object with matrices A, B, Q, R."""
        missing = [key for key in ("A", "B", "Q", "R") if key not in data]
        if missing:
            raise ValueError(f"care problem is missing {', '.join(missing)}")
        prob = CareProblem(
            a_mat=np.atleast_2d(np.asarray(data["A"], dtype=float)),
            b_mat=np.atleast_2d(np.asarray(data["B"], dtype=float)),
            q_mat=np.atleast_2d(np.asarray(data["Q"], dtype=float)),
            r_mat=np.atleast_2d(np.asarray(data["R"], dtype=float)),
        )
        return RiccatiSolver(solver).solve_care(prob)


# Global orchestrator instance
orchestrator = ExperimentOrchestrator()
