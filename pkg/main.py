#!/usr/bin/env python3
"""
Main entry point for the RNQG control toolkit.
Provides CLI interface for simulation, training, comparison and gain queries.
"""

import sys
import json
import argparse
from pathlib import Path
from typing import List, Optional

import numpy as np

from src.logger import logger, setup_logging
from src.config import ConfigError, settings, load_experiment_config
from src.models import ControllerKind

# Lazy imports - the orchestrator pulls in the numerical stack
_orchestrator = None

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

EXACT_CONTROLLERS = [k.value for k in ControllerKind if not k.is_approximate]
APPROX_CONTROLLERS = [k.value for k in ControllerKind if k.is_approximate]


def get_orchestrator():
    """Lazy load orchestrator."""
    global _orchestrator
    if _orchestrator is None:
        from src.orchestrator import orchestrator
        _orchestrator = orchestrator
    return _orchestrator


def parse_state(text: str) -> np.ndarray:
    """Parse a comma-separated state vector like "0.35,0,0.01,0"."""
    try:
        values = [float(part) for part in text.split(",")]
    except ValueError:
        raise ValueError(f"state: cannot parse '{text}' as comma-separated numbers")
    if not values or not np.all(np.isfinite(values)):
        raise ValueError(f"state: '{text}' must contain finite numbers")
    return np.asarray(values)


def parse_int_list(text: str, name: str) -> List[int]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise ValueError(f"{name}: cannot parse '{text}' as comma-separated integers")


def _start(args, command: str, digest: str, seeds: List[int]):
    out_dir = Path(args.out)
    manifest = get_orchestrator().start_manifest(command, out_dir, digest, args.config, seeds)
    return out_dir, manifest


def run_simulate(args) -> int:
    """Run one benchmark case."""
    config, digest = load_experiment_config(args.config)
    seed = args.seed if args.seed is not None else config.noise.seed
    out_dir, manifest = _start(args, "simulate", digest, [seed])
    orchestrator = get_orchestrator()
    schedule_dir = Path(args.schedules) if args.schedules else out_dir

    summary = orchestrator.simulate(args.case, ControllerKind(args.controller), seed, config, out_dir, schedule_dir)
    orchestrator.finish_manifest(manifest)

    scores = summary["metrics"]
    print(f"\n✅ Case {args.case} with {args.controller} finished ({summary['samples']} samples, seed {seed})")
    print(f"  - IAE:  {scores.iae:.6g}")
    print(f"  - ITAE: {scores.itae:.6g}")
    print(f"  - CEF:  {scores.cef:.6g}")
    print("\nFiles:")
    for path in summary["paths"]:
        print(f"  - {path}")
    return EXIT_OK


def run_train(args) -> int:
    """Train value weights for approximate controllers."""
    config, digest = load_experiment_config(args.config)
    if args.seed is not None:
        config = config.model_copy(update={"train": config.train.model_copy(update={"seed": args.seed})})
    out_dir, manifest = _start(args, "train", digest, [config.train.seed])
    kinds = [args.controller] if args.controller else APPROX_CONTROLLERS

    orchestrator = get_orchestrator()
    for kind in kinds:
        schedule, path = orchestrator.train(ControllerKind(kind), config, out_dir)
        status = "converged" if schedule.converged else "not converged"
        print(f"\n✅ Trained {kind}: {schedule.basis.count} weights, N={schedule.horizon}, {status}")
        print(f"  - Schedule: {path}")
        print("  - Final backward steps |W_k - W_k+1|:")
        for k in range(min(3, schedule.horizon + 1)):
            print(f"      k={k}: {schedule.deltas[k]:.3e}")
    orchestrator.finish_manifest(manifest)
    return EXIT_OK


def run_compare(args) -> int:
    """Seed sweep reduced to a comparison table."""
    seeds = parse_int_list(args.seeds, "seeds")
    cases = parse_int_list(args.cases, "cases")
    controllers = [ControllerKind(c.strip()) for c in args.controllers.split(",") if c.strip()]
    bad_cases = [c for c in cases if c not in (1, 2, 3)]
    if bad_cases:
        raise ConfigError(f"cases: must be drawn from 1, 2, 3 (got {bad_cases})")
    if not seeds:
        raise ValueError("seeds: at least one seed is required")

    config, digest = load_experiment_config(args.config)
    out_dir, manifest = _start(args, "compare", digest, seeds)
    orchestrator = get_orchestrator()
    schedule_dir = Path(args.schedules) if args.schedules else out_dir
    rows = orchestrator.compare(cases, controllers, seeds, config, schedule_dir, jobs=args.jobs or settings.jobs)

    from src.storage import store
    csv_path = store.write_comparison_csv(rows, out_dir / "comparison.csv")
    table = store.format_comparison(rows)
    (out_dir / "comparison.txt").write_text(table + "\n")
    orchestrator.finish_manifest(manifest)

    print(f"\n📊 Comparison over {len(seeds)} seeds\n")
    print(table)
    failures = sum(row.failures for row in rows)
    if failures:
        print(f"\n⚠️  {failures} seed runs failed and were left out of the statistics")
    print(f"\n✅ Table written to {csv_path}")
    return EXIT_OK


def run_gain(args) -> int:
    """Print K, P and diagnostics at one state as JSON."""
    state = parse_state(args.state)
    config, _ = load_experiment_config(args.config)
    solution = get_orchestrator().gain(state, ControllerKind(args.controller), config)
    print(json.dumps({
        "controller": args.controller,
        "state": state.tolist(),
        "K": solution.k_gain.tolist(),
        "P": solution.p_mat.tolist(),
        "diagnostics": solution.diagnostics.model_dump(),
    }, indent=2))
    return EXIT_OK


def run_care_solve(args) -> int:
    """Solve a CARE read from a JSON file and print P as JSON."""
    try:
        data = json.loads(Path(args.problem).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"problem: cannot read {args.problem}: {e}")
    if not isinstance(data, dict):
        raise ConfigError("problem: expected a JSON object with A, B, Q, R")
    config, _ = load_experiment_config(args.config)
    solution = get_orchestrator().care_solve(data, config.solver)
    print(json.dumps({
        "P": solution.p_mat.tolist(),
        "residual_norm": solution.residual_norm,
        "stable": solution.stable,
        "closed_loop_abscissa": solution.closed_loop_abscissa,
        "refined": solution.refined,
    }, indent=2))
    return EXIT_OK


def exit_code_for(error: Exception) -> int:
    """Map an exception to the CLI exit code."""
    from src.controllers import MissingSchedule
    from src.plant import WeightError
    from src.riccati import RiccatiError
    from src.simulate import SimulationError
    from src.storage import StorageError
    from src.synthesis import SynthesisError
    from src.value_approx import ApproximationError, InsufficientSamples

    if isinstance(error, (ConfigError, MissingSchedule, InsufficientSamples, StorageError)):
        return EXIT_USAGE
    # LinAlgError subclasses ValueError
    if isinstance(error, (RiccatiError, SynthesisError, SimulationError, ApproximationError, WeightError,
                          np.linalg.LinAlgError)):
        return EXIT_NUMERICAL
    if isinstance(error, ValueError):
        return EXIT_USAGE
    return EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, help='Experiment config file (JSON); defaults reproduce the study')
    common.add_argument('--seed', type=int, help='Override the noise seed (simulate) or sampling seed (train)')
    common.add_argument('--out', type=str, default=settings.results_dir,
                        help=f'Output directory (default: {settings.results_dir})')
    common.add_argument('--schedules', type=str, help='Directory holding trained schedules (default: --out)')
    common.add_argument('--quiet', action='store_true', help='Only log warnings and errors')

    parser = argparse.ArgumentParser(
        description="Robust nonlinear quadratic Gaussian control toolkit",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Simulate Case 1 with the SDRE controller
  python main.py simulate --case 1 --controller sdre --seed 7 --out results/

  # Train value weights for both approximate controllers
  python main.py train --out results/

  # Compare all controllers over ten seeds with four workers
  python main.py compare --cases 1,2,3 --seeds 0,1,2,3,4,5,6,7,8,9 --jobs 4 --out results/

  # Print the RNQG gain at a state
  python main.py gain --state 0.349,0,0.01,0 --controller rnqg

  # Solve a CARE given as JSON {"A": ..., "B": ..., "Q": ..., "R": ...}
  python main.py care-solve problem.json
        """
    )

    subparsers = parser.add_subparsers(dest='command', help='Command to execute')

    simulate_parser = subparsers.add_parser('simulate', parents=[common], help='Run one benchmark case')
    simulate_parser.add_argument('--case', type=int, choices=[1, 2, 3], default=1, help='Benchmark case (default: 1)')
    simulate_parser.add_argument('--controller', type=str, choices=[k.value for k in ControllerKind],
                                 default='sdre', help='Controller (default: sdre)')

    train_parser = subparsers.add_parser('train', parents=[common], help='Train value weights')
    train_parser.add_argument('--controller', type=str, choices=APPROX_CONTROLLERS,
                              help='Approximate controller to train (default: all)')

    compare_parser = subparsers.add_parser('compare', parents=[common], help='Build the comparison table')
    compare_parser.add_argument('--cases', type=str, default='1,2,3', help='Comma-separated cases (default: 1,2,3)')
    compare_parser.add_argument('--controllers', type=str, default=','.join(k.value for k in ControllerKind),
                                help='Comma-separated controllers (default: all five)')
    compare_parser.add_argument('--seeds', type=str, default=','.join(str(s) for s in range(10)),
                                help='Comma-separated seeds (default: 0..9)')
    compare_parser.add_argument('--jobs', type=int, help=f'Worker processes (default: {settings.jobs})')

    gain_parser = subparsers.add_parser('gain', parents=[common], help='Print the gain at one state')
    gain_parser.add_argument('--state', type=str, required=True, help='Comma-separated state vector')
    gain_parser.add_argument('--controller', type=str, choices=EXACT_CONTROLLERS, default='sdre',
                             help='Controller (default: sdre)')

    care_parser = subparsers.add_parser('care-solve', parents=[common], help='Solve a CARE from JSON')
    care_parser.add_argument('problem', type=str, help='JSON file with matrices A, B, Q, R')

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    # Show help if no command
    if not args.command:
        parser.print_help()
        return EXIT_OK

    if args.quiet:
        setup_logging("WARNING")

    # Log startup
    logger.info("Application started", command=args.command)

    commands = {
        'simulate': run_simulate,
        'train': run_train,
        'compare': run_compare,
        'gain': run_gain,
        'care-solve': run_care_solve,
    }

    try:
        return commands[args.command](args)

    except KeyboardInterrupt:
        logger.info("Application interrupted by user")
        print("\n\n👋 Goodbye!", file=sys.stderr)
        return EXIT_OK

    except Exception as e:
        code = exit_code_for(e)
        if code == EXIT_FAILURE:
            logger.error("Application error", error=str(e), exc_info=True)
        else:
            logger.error("Command failed", command=args.command, error=str(e), exit_code=code)
        print(f"\n❌ Error: {str(e)}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
