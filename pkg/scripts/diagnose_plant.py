"""
Diagnostic script for the configured pendulum plant.
Checks the SDC factorization, the origin and the cost weights over a grid of
states, and prints a short Riccati-gain survey.
"""

import sys
import os
import argparse

import numpy as np

# Add parent directory to path to import src modules
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.config import load_experiment_config
from src.logger import logger
from src.pendulum import build_from_config, energies
from src.plant import validate_plant
from src.synthesis import Synthesizer, SynthesisError
from src.riccati import RiccatiError


def sample_states(count: int, seed: int, domain) -> np.ndarray:
    bounds = np.asarray(domain, dtype=float)
    rng = np.random.default_rng(seed)
    grid = rng.uniform(bounds[:, 0], bounds[:, 1], size=(count, len(bounds)))
    return np.vstack([np.zeros(len(bounds)), grid])


def main():
    parser = argparse.ArgumentParser(description="Validate the configured plant")
    parser.add_argument('--config', type=str, help='Experiment config file (JSON)')
    parser.add_argument('--samples', type=int, default=200, help='Random states to check (default: 200)')
    parser.add_argument('--seed', type=int, default=0, help='Sampling seed (default: 0)')
    args = parser.parse_args()

    config, digest = load_experiment_config(args.config)
    plant, weights, noise, params = build_from_config(config)
    states = sample_states(args.samples, args.seed, config.train.domain)

    print("\n" + "=" * 80)
    print("🔍 PLANT DIAGNOSTIC REPORT")
    print("=" * 80)
    print(f"  Plant: {plant.name} (n={plant.dim_state}, m={plant.dim_input}, r={plant.dim_output})")
    print(f"  Config sha256: {digest[:16]}...")

    report = validate_plant(plant, states, weights)
    status_icon = "✅" if report.passed else "❌"
    print(f"\n📐 SDC FACTORIZATION")
    print(f"  {status_icon} {report.samples} states checked")
    print(f"  Max defect |A(x)x - f(x)|: {report.max_defect:.3e}")
    print(f"  Max relative defect: {report.max_relative_defect:.3e}")
    print(f"  Origin defect |f(0)|: {report.origin_defect:.3e}")
    for violation in report.violations[:10]:
        print(f"    - {violation}")
    if len(report.violations) > 10:
        print(f"    ... and {len(report.violations) - 10} more")

    kinetic, potential = energies(np.asarray(config.sim.x0, dtype=float), params)
    print(f"\n⚡ ENERGY AT x0")
    print(f"  Kinetic: {kinetic:.6g} J, potential: {potential:.6g} J")

    print(f"\n🎛️  GAIN SURVEY")
    synth = Synthesizer(config.solver)
    failures = 0
    abscissae = []
    for x in states[:25]:
        try:
            solution = synth.rnqg_gain(plant.sdc(x), weights, noise)
            abscissae.append(solution.diagnostics.spectral_abscissa)
        except (RiccatiError, SynthesisError) as e:
            failures += 1
            logger.warning("Gain survey failure", state=x.tolist(), error=str(e))
    if abscissae:
        print(f"  RNQG closed-loop abscissa: worst {max(abscissae):.4g}, best {min(abscissae):.4g}")
    print(f"  Synthesis failures: {failures}/{min(25, len(states))}")

    print("\n" + "=" * 80)
    passed = report.passed and failures == 0
    print("✅ Plant validation passed" if passed else "❌ Plant validation failed")
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
