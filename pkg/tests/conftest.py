"""Shared fixtures: the benchmark pendulum, its Case-1 weights and seeded generators."""

import numpy as np
import pytest

from src.config import ExperimentConfig, SimSection, TrainSection
from src.models import PendulumParams, TrajectoryRecord, WeightSchedule
from src.pendulum import case_weights, default_noise, pendulum_plant
from src.plant import constant_weights, linear_plant
from src.value_approx import monomial_basis


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def params():
    return PendulumParams()


@pytest.fixture
def plant(params):
    return pendulum_plant(params)


@pytest.fixture
def weights():
    return case_weights()


@pytest.fixture
def noise(params):
    return default_noise(params)


@pytest.fixture
def scalar_plant():
    """x' = -0.1 x + 0.1 u; with dt = 1 the Euler map is x+ = 0.9 x + 0.1 u."""
    return linear_plant([[-0.1]], [[0.1]])


@pytest.fixture
def scalar_weights():
    return constant_weights([[1.0]], [[1.0]], [[0.0]])


@pytest.fixture
def short_config():
    """Default study shortened to 2 s of simulated time and a small training run."""
    return ExperimentConfig(
        sim=SimSection(t_end=2.0),
        train=TrainSection(horizon=20, eta=40),
    )


def pendulum_states(rng, count, theta_max=np.pi / 3):
    """Random pendulum states with |theta| <= theta_max."""
    low = np.array([-theta_max, -np.pi, -3.0, -3.0])
    high = -low
    return rng.uniform(low, high, size=(count, 4))


def fixed_schedule(weight, domain=((-1.0, 1.0),)):
    """Scalar schedule with V(x) = weight * x^2 at every step."""
    return WeightSchedule(
        weights_by_step=np.array([[weight], [weight]]),
        horizon=1,
        basis=monomial_basis(1, 2),
        domain=domain,
        eta=1,
        seed=0,
        converged=False,
    )


def constant_record(theta, u, samples=101):
    """Pendulum record over [0, 1] with constant theta and input, everything else zero."""
    times = np.linspace(0.0, 1.0, samples)
    states = np.zeros((samples, 4))
    states[:, 0] = theta
    return TrajectoryRecord(
        times=times,
        states=states,
        inputs=np.full((samples, 1), u),
        outputs=np.zeros((samples, 4)),
        noises=np.zeros((samples, 4)),
        measurement_noises=np.zeros((samples, 4)),
        disturbances=np.zeros((samples, 1)),
    )
