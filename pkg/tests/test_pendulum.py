"""Tests for the flywheel pendulum model."""

import numpy as np
import pytest

from src.config import NoiseSection, PlantSection, WeightsSection
from src.controllers import ZeroController
from src.models import (
    DisturbanceKind,
    DisturbanceProfile,
    Integrator,
    MotorParams,
    NoiseSpec,
    SimConfig,
    TrajectoryRecord,
)
from src.pendulum import (
    case_weights,
    default_noise,
    drift,
    dynamics,
    energies,
    input_map,
    lagrangian_residual,
    motor_voltage,
    pendulum_plant,
    sdc,
    sinc,
    torque_from_current,
    voltage_profile,
)
from src.simulate import run
from tests.conftest import pendulum_states


def test_derived_constants(params):
    derived = params.derived
    assert derived.c_t == pytest.approx((0.6 * 0.10 + 0.31 * 0.14) * 9.81)
    assert derived.i_t == pytest.approx(0.6 * 0.01 + 0.31 * 0.0196 + 0.0023)


@pytest.mark.parametrize("z", [0.0, 1e-8, 1e-5, 9e-5, 1e-4, 0.3, 1.0, -2.5])
def test_sinc_matches_sin_over_z(z):
    expected = 1.0 if z == 0.0 else np.sin(z) / z
    assert sinc(z) == pytest.approx(expected, rel=1e-15, abs=1e-16)


def test_sdc_reproduces_drift(rng, params):
    for x in pendulum_states(rng, 200, theta_max=np.pi):
        coeffs = sdc(x, params)
        np.testing.assert_allclose(coeffs.a_mat @ x, drift(x, params), atol=1e-12)


def test_sdc_channel_defaults(params):
    coeffs = sdc(np.zeros(4), params)
    np.testing.assert_array_equal(coeffs.c_mat, np.eye(4))
    np.testing.assert_array_equal(coeffs.d_mat, np.zeros((4, 1)))
    np.testing.assert_array_equal(coeffs.f_dist, input_map(params))
    np.testing.assert_array_equal(coeffs.g_dist, np.zeros((4, 1)))


def test_input_enters_through_b(rng, params):
    x = pendulum_states(rng, 1)[0]
    np.testing.assert_allclose(
        dynamics(x, 0.7, params) - drift(x, params), 0.7 * input_map(params)[:, 0], rtol=1e-12
    )


def test_lagrange_equations_hold(rng, params):
    for x in pendulum_states(rng, 50, theta_max=np.pi):
        u = rng.uniform(-1.0, 1.0)
        np.testing.assert_allclose(lagrangian_residual(x, u, params), 0.0, atol=1e-10)


def test_lagrange_residual_detects_wrong_accelerations(params):
    residual = lagrangian_residual(np.zeros(4), 0.0, params, accelerations=np.array([1.0, 0.0]))
    assert residual[0] == pytest.approx(params.derived.i_t + params.i_w)
    assert residual[1] == pytest.approx(params.i_w)


@pytest.mark.slow
def test_unforced_energy_is_conserved(plant, params):
    x0 = np.array([np.pi - 0.1, 0.0, 0.0, 0.0])
    cfg = SimConfig(
        dt=0.01,
        t_end=10.0,
        integrator=Integrator.RK4,
        x0=x0,
        disturbance=DisturbanceProfile(kind=DisturbanceKind.NONE),
        noise=NoiseSpec(l_mat=np.zeros((4, 1)), h_mat=np.zeros((4, 1))),
    )
    record = run(plant, ZeroController(plant), cfg)
    totals = np.array([sum(energies(x, params)) for x in record.states])
    assert np.abs(totals - totals[0]).max() < 1e-6


def test_energy_at_rest_upright(params):
    kinetic, potential = energies(np.zeros(4), params)
    assert kinetic == 0.0
    assert potential == pytest.approx(params.derived.c_t)


def test_case_weights_quadratic_diagonal():
    weights = case_weights()
    x = np.array([0.5, -1.0, 2.0, 0.0])
    np.testing.assert_allclose(weights.q_of_x(x), np.diag(1.0 + x ** 2))
    np.testing.assert_array_equal(weights.r_of_x(x), [[1.0]])
    np.testing.assert_array_equal(weights.s_of_x(x), np.eye(4))
    assert weights.gamma1 == weights.gamma2 == 5.0


def test_case_weights_from_section():
    weights = case_weights(WeightsSection(q_diag_base=[2, 2, 2, 2], q_diag_quadratic=[0, 0, 0, 0], r_diag=[0.5]))
    np.testing.assert_allclose(weights.q_of_x(np.ones(4)), 2.0 * np.eye(4))
    np.testing.assert_array_equal(weights.r_of_x(np.ones(4)), [[0.5]])


def test_default_noise(params):
    noise = default_noise(params, NoiseSection(l_scale=0.02, h_value=0.3))
    np.testing.assert_allclose(noise.l_mat, 0.02 * input_map(params))
    np.testing.assert_array_equal(noise.h_mat, np.full((4, 1), 0.3))


def test_unmatched_disturbance_map(params):
    plant = pendulum_plant(params, PlantSection(disturbance_map="none"))
    assert not plant.sdc(np.zeros(4)).f_dist.any()


def test_custom_output_map(params):
    section = PlantSection(c_mat=[[1, 0, 0, 0], [0, 0, 1, 0]])
    plant = pendulum_plant(params, section)
    coeffs = plant.sdc(np.zeros(4))
    assert plant.dim_output == 2
    assert coeffs.d_mat.shape == (2, 1)
    assert coeffs.g_dist.shape == (2, 1)


class TestMotor:

    motor = MotorParams(l_m=0.002, r_m=1.5, k_e=0.02, k_t=0.02, n_g=5.0)

    def test_voltage_equation(self):
        assert motor_voltage(2.0, 10.0, 30.0, self.motor) == pytest.approx(0.002 * 10 + 1.5 * 2 + 0.02 * 30)

    def test_torque_from_current(self):
        assert torque_from_current(1.0, self.motor) == pytest.approx(0.1)

    def test_voltage_profile_of_constant_torque(self):
        times = np.linspace(0.0, 1.0, 11)
        states = np.zeros((11, 4))
        states[:, 3] = 2.0
        record = TrajectoryRecord(
            times=times,
            states=states,
            inputs=np.full((11, 1), 0.1),
            outputs=np.zeros((11, 4)),
            noises=np.zeros((11, 4)),
            measurement_noises=np.zeros((11, 4)),
            disturbances=np.zeros((11, 1)),
        )
        profile = voltage_profile(record, self.motor)
        np.testing.assert_allclose(profile.current, 1.0)
        np.testing.assert_allclose(profile.current_rate, 0.0, atol=1e-12)
        np.testing.assert_allclose(profile.motor_speed, 10.0)
        np.testing.assert_allclose(profile.voltage, 1.5 + 0.02 * 10.0)
