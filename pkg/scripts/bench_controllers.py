"""
Benchmark online controller cost.
Times approximate-control evaluation against SDRE synthesis at the same states.
"""

import sys
import os
import time
import argparse

import numpy as np

# Add parent directory to path to import src modules
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.config import load_experiment_config
from src.pendulum import build_from_config
from src.storage import store
from src.synthesis import Synthesizer
from src.value_approx import approx_control, monomial_basis, stage_cost, train_weights


def main():
    parser = argparse.ArgumentParser(description="Time approx_control against sdre_gain")
    parser.add_argument('--config', type=str, help='Experiment config file (JSON)')
    parser.add_argument('--schedule', type=str, help='Trained schedule (default: train a short one)')
    parser.add_argument('--evaluations', type=int, default=10_000, help='Evaluations per controller (default: 10000)')
    parser.add_argument('--seed', type=int, default=0, help='State sampling seed (default: 0)')
    args = parser.parse_args()

    config, _ = load_experiment_config(args.config)
    plant, weights, _, _ = build_from_config(config)

    if args.schedule:
        schedule = store.load_schedule(args.schedule)
    else:
        print("⏳ No schedule given, training a short quadratic one")
        schedule = train_weights(
            plant, monomial_basis(plant.dim_state, 2), stage_cost(weights, config.train.dt),
            horizon=50, eta=None, domain=config.train.domain, seed=config.train.seed,
        )

    bounds = np.asarray(config.train.domain, dtype=float)
    states = np.random.default_rng(args.seed).uniform(
        bounds[:, 0], bounds[:, 1], size=(args.evaluations, plant.dim_state)
    )
    r_doubled = lambda x: 2.0 * weights.r_of_x(x)
    b_of_x = lambda x: plant.sdc(x).b_mat
    synth = Synthesizer(config.solver)

    start = time.perf_counter()
    for x in states:
        approx_control(x, schedule, r_doubled, b_of_x)
    approx_seconds = time.perf_counter() - start

    start = time.perf_counter()
    for x in states:
        synth.sdre_gain(plant.sdc(x), weights)
    sdre_seconds = time.perf_counter() - start

    per_approx = approx_seconds / args.evaluations * 1e6
    per_sdre = sdre_seconds / args.evaluations * 1e6
    print(f"\n📊 {args.evaluations} evaluations (basis size {schedule.basis.count})")
    print(f"  - approx_control: {approx_seconds:.3f} s ({per_approx:.1f} us each)")
    print(f"  - sdre_gain:      {sdre_seconds:.3f} s ({per_sdre:.1f} us each)")
    print(f"  - Speedup: {sdre_seconds / max(approx_seconds, 1e-12):.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
