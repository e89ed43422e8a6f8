"""
Flywheel inverted pendulum benchmark plant.

State x = (theta, phi, theta_dot, phi_dot) in rad and rad/s; input is the
flywheel torque T_w in N m. theta = 0 is upright.
"""

from typing import Optional, Tuple

import numpy as np

from src.config import ExperimentConfig, NoiseSection, PlantSection, WeightsSection
from src.models import (
    CostWeights,
    DimensionMismatch,
    MotorParams,
    NoiseSpec,
    PendulumParams,
    PlantModel,
    SdcEvaluation,
    TrajectoryRecord,
    VoltageProfile,
)


def sinc(z: float) -> float:
    """sin(z)/z with sinc(0) = 1 (unnormalized, unlike numpy.sinc)."""
    if abs(z) < 1e-4:
        # Taylor series; the remainder is below 1e-18 in this range
        z2 = z * z
        return 1.0 - z2 / 6.0 + z2 * z2 / 120.0
    return float(np.sin(z) / z)


def input_map(params: PendulumParams) -> np.ndarray:
    """B = (0, 0, -1/I_T, (I_T+I_w)/(I_w I_T))^T as a 4x1 column."""
    i_t = params.derived.i_t
    return np.array([[0.0], [0.0], [-1.0 / i_t], [(i_t + params.i_w) / (params.i_w * i_t)]])


def dynamics(x: np.ndarray, u: float, params: PendulumParams) -> np.ndarray:
    """
    State derivative of the flywheel pendulum.

    Args:
        x: State (theta, phi, theta_dot, phi_dot)
        u: Flywheel torque, N m
        params: Physical parameters

    Returns:
        x_dot as a 4-vector
    """
    derived = params.derived
    ratio = derived.c_t / derived.i_t
    gravity = ratio * np.sin(x[0])
    return np.array([
        x[2],
        x[3],
        gravity - u / derived.i_t,
        -gravity + u * (derived.i_t + params.i_w) / (params.i_w * derived.i_t),
    ])


def drift(x: np.ndarray, params: PendulumParams) -> np.ndarray:
    """Unforced dynamics f(x)."""
    return dynamics(x, 0.0, params)


def sdc(
    x: np.ndarray,
    params: PendulumParams,
    c_mat: Optional[np.ndarray] = None,
    d_mat: Optional[np.ndarray] = None,
    f_dist: Optional[np.ndarray] = None,
    g_dist: Optional[np.ndarray] = None,
) -> SdcEvaluation:
    """
    SDC factorization f(x) = A(x) x using sin(theta) = sinc(theta) theta.

    Channel defaults: C = I4, D = 0, F = B (matched torque disturbance), G = 0.
    """
    derived = params.derived
    coupling = derived.c_t / derived.i_t * sinc(float(x[0]))
    a_mat = np.array([
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [coupling, 0.0, 0.0, 0.0],
        [-coupling, 0.0, 0.0, 0.0],
    ])
    b_mat = input_map(params)
    c_mat = np.eye(4) if c_mat is None else c_mat
    r = c_mat.shape[0]
    f_dist = b_mat if f_dist is None else f_dist
    return SdcEvaluation(
        a_mat=a_mat,
        b_mat=b_mat,
        c_mat=c_mat,
        d_mat=np.zeros((r, 1)) if d_mat is None else d_mat,
        f_dist=f_dist,
        g_dist=np.zeros((r, f_dist.shape[1])) if g_dist is None else g_dist,
        state=np.array(x, dtype=float),
    )


def energies(x: np.ndarray, params: PendulumParams) -> Tuple[float, float]:
    """
    Kinetic and potential energy.

    Returns:
        (T, V) in joules with V = C_T cos(theta)
    """
    derived = params.derived
    theta_dot, phi_dot = x[2], x[3]
    kinetic = (0.5 * (derived.i_t + params.i_w) * theta_dot ** 2
               + params.i_w * theta_dot * phi_dot
               + 0.5 * params.i_w * phi_dot ** 2)
    potential = derived.c_t * np.cos(x[0])
    return float(kinetic), float(potential)


def lagrangian_residual(
    x: np.ndarray,
    u: float,
    params: PendulumParams,
    accelerations: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Residuals of the Euler-Lagrange equations in (theta, phi) minus the generalized forces (0, T_w).

    Args:
        x: State
        u: Flywheel torque
        params: Physical parameters
        accelerations: (theta_ddot, phi_ddot); taken from `dynamics` when omitted

    Returns:
        2-vector, zero when the accelerations satisfy the equations of motion
    """
    derived = params.derived
    if accelerations is None:
        accelerations = dynamics(x, u, params)[2:]
    theta_ddot, phi_ddot = accelerations
    theta_eq = (derived.i_t + params.i_w) * theta_ddot + params.i_w * phi_ddot - derived.c_t * np.sin(x[0])
    phi_eq = params.i_w * (theta_ddot + phi_ddot) - u
    return np.array([theta_eq, phi_eq])


# ===== Motor =====

def motor_voltage(i: float, di_dt: float, omega_m: float, mp: MotorParams) -> float:
    """Armature voltage V = L_m di/dt + R_m i + K_e omega_m."""
    return mp.l_m * di_dt + mp.r_m * i + mp.k_e * omega_m


def torque_from_current(i: float, mp: MotorParams) -> float:
    """Flywheel torque T_w = N_g K_t i."""
    return mp.n_g * mp.k_t * i


def voltage_profile(record: TrajectoryRecord, mp: MotorParams) -> VoltageProfile:
    """
    Armature current and voltage needed to realize a recorded torque trajectory.

    The current rate uses second-order finite differences on the recorded grid;
    motor speed is N_g times the flywheel rate.
    """
    if len(record) < 2:
        raise ValueError("voltage profile needs at least two samples")
    torque = record.inputs[:, 0]
    current = torque / (mp.n_g * mp.k_t)
    current_rate = np.gradient(current, record.times)
    motor_speed = mp.n_g * record.states[:, 3]
    voltage = mp.l_m * current_rate + mp.r_m * current + mp.k_e * motor_speed
    return VoltageProfile(
        times=record.times,
        current=current,
        current_rate=current_rate,
        motor_speed=motor_speed,
        voltage=voltage,
    )


# ===== Factories =====

def _optional_matrix(values, shape_hint: str) -> Optional[np.ndarray]:
    if values is None:
        return None
    mat = np.atleast_2d(np.asarray(values, dtype=float))
    if mat.ndim != 2:
        raise DimensionMismatch(f"{shape_hint} must be a matrix")
    return mat


def pendulum_plant(params: Optional[PendulumParams] = None, section: Optional[PlantSection] = None) -> PlantModel:
    """
    Build the pendulum PlantModel.

    Args:
        params: Physical parameters (defaults to the benchmark values)
        section: Optional plant config section for channel overrides

    Returns:
        PlantModel with n=4, m=1
    """
    if params is None:
        params = params_from_config(section) if section is not None else PendulumParams()

    b_mat = input_map(params)
    c_mat = d_mat = g_dist = None
    f_dist = b_mat
    if section is not None:
        c_mat = _optional_matrix(section.c_mat, "c_mat")
        d_mat = _optional_matrix(section.d_mat, "d_mat")
        g_dist = _optional_matrix(section.g_mat, "g_mat")
        if section.disturbance_map == "none":
            f_dist = np.zeros((4, 1))

    r = 4 if c_mat is None else c_mat.shape[0]
    if c_mat is not None and c_mat.shape[1] != 4:
        raise DimensionMismatch(f"c_mat must have 4 columns, got {c_mat.shape}")
    if d_mat is not None and d_mat.shape != (r, 1):
        raise DimensionMismatch(f"d_mat must be {r}x1, got {d_mat.shape}")
    if g_dist is not None and g_dist.shape != (r, 1):
        raise DimensionMismatch(f"g_mat must be {r}x1, got {g_dist.shape}")

    def plant_drift(x: np.ndarray) -> np.ndarray:
        return drift(x, params)

    def plant_sdc(x: np.ndarray) -> SdcEvaluation:
        return sdc(x, params, c_mat=c_mat, d_mat=d_mat, f_dist=f_dist, g_dist=g_dist)

    return PlantModel(
        name="flywheel-pendulum",
        dim_state=4,
        dim_input=1,
        dim_output=r,
        dim_disturbance=1,
        dim_process_noise=1,
        drift=plant_drift,
        sdc=plant_sdc,
    )


def params_from_config(section: PlantSection) -> PendulumParams:
    return PendulumParams(**section.pendulum.model_dump())


def motor_from_config(section: PlantSection) -> Optional[MotorParams]:
    if section.motor is None:
        return None
    return MotorParams(**section.motor.model_dump())


def case_weights(section: Optional[WeightsSection] = None, n: int = 4) -> CostWeights:
    """
    Q(x) = diag(base + quad * x^2), R = diag(r), S = diag(s).

    The defaults give Q = diag(1+theta^2, 1+phi^2, 1+theta_dot^2, 1+phi_dot^2), R = 1, S = I4.
    """
    section = section or WeightsSection()
    base = np.asarray(section.q_diag_base, dtype=float)
    quad = np.asarray(section.q_diag_quadratic, dtype=float)
    if base.shape != (n,) or quad.shape != (n,):
        raise DimensionMismatch(f"q_diag_base and q_diag_quadratic need {n} entries")
    r_mat = np.diag(np.asarray(section.r_diag, dtype=float))
    s_mat = np.diag(np.asarray(section.s_diag, dtype=float))

    def q_of_x(x: np.ndarray) -> np.ndarray:
        return np.diag(base + quad * np.asarray(x, dtype=float) ** 2)

    return CostWeights(
        q_of_x=q_of_x,
        r_of_x=lambda x: r_mat,
        s_of_x=lambda x: s_mat,
        gamma1=section.gamma1,
        gamma2=section.gamma2,
    )


def default_noise(
    params: PendulumParams,
    section: Optional[NoiseSection] = None,
    dim_output: int = 4,
) -> NoiseSpec:
    """L = B * l_scale (4x1), H = h_value * ones(r, 1)."""
    section = section or NoiseSection()
    return NoiseSpec(
        l_mat=input_map(params) * section.l_scale,
        h_mat=np.full((dim_output, 1), section.h_value),
        state_noise_std=section.state_noise_std,
        measurement_noise_std=section.measurement_noise_std,
        seed=section.seed,
    )


def build_from_config(config: ExperimentConfig) -> Tuple[PlantModel, CostWeights, NoiseSpec, PendulumParams]:
    """Plant, weights, noise and parameters described by an experiment config."""
    params = params_from_config(config.plant)
    plant = pendulum_plant(params, config.plant)
    weights = case_weights(config.weights)
    noise = default_noise(params, config.noise, plant.dim_output)
    return plant, weights, noise, params
