"""
Fixed-step closed-loop simulation with noise and disturbance injection.

Noise realizations come from a counter-based Philox stream with a fixed
uniform-to-normal map, so a (config, seed) pair reproduces every recorded
sample bit for bit.
"""

import math
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp, trapezoid

from src.config import ConfigError, ExperimentConfig
from src.controllers import Controller, build_controller
from src.logger import logger
from src.models import (
    ControllerKind,
    DimensionMismatch,
    DisturbanceKind,
    DisturbanceProfile,
    Integrator,
    Metrics,
    NoiseSpec,
    PlantModel,
    SimConfig,
    TrajectoryRecord,
    WeightSchedule,
)
from src.pendulum import build_from_config
from src.plant import WeightError
from src.riccati import RiccatiError
from src.synthesis import SynthesisError, Synthesizer
from src.value_approx import ApproximationError, robust_stage_cost


class SimulationError(Exception):
    """Custom exception for simulation errors."""
    pass


class ControllerFailure(SimulationError):
    """Controller evaluation failed mid-run; carries the partial record."""

    def __init__(self, message: str, record: TrajectoryRecord, tag: str = "controller-failure"):
        super().__init__(message)
        self.record = record
        self.tag = tag


class IntegrationFailure(SimulationError):
    """The implicit solver gave up inside a control interval."""

    def __init__(self, message: str, record: Optional[TrajectoryRecord] = None):
        super().__init__(message)
        self.record = record


class NonFiniteState(SimulationError):
    """State became NaN or infinite."""

    def __init__(self, message: str, record: Optional[TrajectoryRecord] = None):
        super().__init__(message)
        self.record = record


# ===== Gaussian stream =====

_TWO_POW_53 = 2.0 ** -53


class GaussianStream:
    """
    Standard normal samples from Philox4x64-10 keyed by the seed.

    Each raw 64-bit word r maps to u = ((r >> 11) + 1) * 2^-53 in (0, 1];
    consecutive pairs (u1, u2) give sqrt(-2 ln u1) cos(2 pi u2) then
    sqrt(-2 ln u1) sin(2 pi u2).
    """

    def __init__(self, seed: int):
        self._bitgen = np.random.Philox(key=int(seed))
        self._spare: Optional[float] = None

    def draw(self, count: int) -> np.ndarray:
        out = np.empty(count)
        filled = 0
        if count and self._spare is not None:
            out[0] = self._spare
            self._spare = None
            filled = 1
        remaining = count - filled
        if remaining <= 0:
            return out

        pairs = (remaining + 1) // 2
        raw = self._bitgen.random_raw(2 * pairs)
        uniform = ((raw >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_POW_53
        radius = np.sqrt(-2.0 * np.log(uniform[0::2]))
        angle = 2.0 * math.pi * uniform[1::2]
        normals = np.empty(2 * pairs)
        normals[0::2] = radius * np.cos(angle)
        normals[1::2] = radius * np.sin(angle)

        out[filled:] = normals[:remaining]
        if 2 * pairs > remaining:
            self._spare = float(normals[-1])
        return out


def gaussian_stream(seed: int, count: int) -> np.ndarray:
    """First `count` samples of the stream for `seed`."""
    return GaussianStream(seed).draw(count)


# ===== Integrators =====

Field = Callable[[np.ndarray], np.ndarray]


def euler_step(field: Field, x: np.ndarray, dt: float) -> np.ndarray:
    return x + dt * field(x)


def rk4_step(field: Field, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = field(x)
    k2 = field(x + 0.5 * dt * k1)
    k3 = field(x + 0.5 * dt * k2)
    k4 = field(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


_STEPPERS = {Integrator.EULER: euler_step, Integrator.RK4: rk4_step}

RADAU_RTOL = 1e-7
RADAU_ATOL = 1e-9


def radau_interval(field: Field, x: np.ndarray, dt: float) -> np.ndarray:
    """
    State after one interval of x' = field(x), by the implicit Radau IIA solver.

    The closed-loop input channel may be far faster than dt.

    Raises:
        IntegrationFailure: the solver did not reach the end of the interval
    """
    solution = solve_ivp(lambda t, z: field(z), (0.0, dt), x, method="Radau",
                         rtol=RADAU_RTOL, atol=RADAU_ATOL)
    if not solution.success:
        raise IntegrationFailure(solution.message)
    return solution.y[:, -1]


# ===== Run =====

class _Recorder:
    """Preallocated trajectory buffers."""

    def __init__(self, samples: int, plant: PlantModel, keep_gains: bool):
        n, m, r, q = plant.dim_state, plant.dim_input, plant.dim_output, plant.dim_disturbance
        self.times = np.zeros(samples)
        self.states = np.zeros((samples, n))
        self.inputs = np.zeros((samples, m))
        self.outputs = np.zeros((samples, r))
        self.noises = np.zeros((samples, n))
        self.measurement_noises = np.zeros((samples, r))
        self.disturbances = np.zeros((samples, q))
        self.gains = np.full((samples, m, n), np.nan) if keep_gains else None

    def record(self, upto: int, error: Optional[str] = None) -> TrajectoryRecord:
        return TrajectoryRecord(
            times=self.times[:upto].copy(),
            states=self.states[:upto].copy(),
            inputs=self.inputs[:upto].copy(),
            outputs=self.outputs[:upto].copy(),
            noises=self.noises[:upto].copy(),
            measurement_noises=self.measurement_noises[:upto].copy(),
            disturbances=self.disturbances[:upto].copy(),
            gains=None if self.gains is None else self.gains[:upto].copy(),
            error=error,
        )


def run(plant: PlantModel, controller: Controller, cfg: SimConfig, keep_gains: bool = False) -> TrajectoryRecord:
    """
    Simulate the closed loop for floor(t_end/dt) steps.

    Per step: draw state noise and form the measurement (or perturb the plant
    state when noise_into_plant is set), evaluate the controller, form the
    disturbance, draw measurement noise and record the output, then integrate
    one step with w held. Euler and RK4 also hold u; Radau holds the gain (and
    the measurement noise) and evaluates the controller's feedback law at the
    solver's states.

    Raises:
        ControllerFailure: controller raised a solver error (partial record attached)
        IntegrationFailure: the implicit solver failed inside an interval
        NonFiniteState: integration produced NaN or inf
    """
    n = plant.dim_state
    x = np.asarray(cfg.x0, dtype=float).copy()
    if x.shape != (n,):
        raise DimensionMismatch(f"x0 must have {n} entries, got {x.shape}")

    steps = cfg.steps
    recorder = _Recorder(steps + 1, plant, keep_gains)
    stream = GaussianStream(cfg.noise.seed)
    integrator = Integrator(cfg.integrator)
    stepper = _STEPPERS.get(integrator)
    state_std = cfg.noise.state_noise_std
    meas_std = cfg.noise.measurement_noise_std
    ones_w = np.ones(plant.dim_disturbance)
    controller.reset()

    logger.info("Simulation started", plant=plant.name, controller=type(controller).__name__,
                steps=steps, dt=cfg.dt, seed=cfg.noise.seed)

    for i in range(steps + 1):
        t = i * cfg.dt
        v = stream.draw(n) * state_std if state_std > 0 else np.zeros(n)
        if cfg.noise_into_plant:
            x = x + v
            measured = x
        else:
            measured = x + v

        try:
            u, k_gain = controller.compute(measured)
        except (RiccatiError, SynthesisError, ApproximationError, WeightError, np.linalg.LinAlgError) as e:
            logger.error("Controller failed", step=i, time=t, error=str(e))
            raise ControllerFailure(f"controller failed at t={t:.4f}: {e}", recorder.record(i, str(e)))
        u = np.atleast_1d(np.asarray(u, dtype=float))

        w = cfg.disturbance.value_at(t) * ones_w
        coeffs = plant.sdc(x)
        eps = stream.draw(plant.dim_output) * meas_std if meas_std > 0 else np.zeros(plant.dim_output)
        y = coeffs.c_mat @ x + coeffs.d_mat @ u + coeffs.g_dist @ w + eps

        recorder.times[i] = t
        recorder.states[i] = x
        recorder.inputs[i] = u
        recorder.outputs[i] = y
        recorder.noises[i] = v
        recorder.measurement_noises[i] = eps
        recorder.disturbances[i] = w
        if recorder.gains is not None and k_gain is not None:
            recorder.gains[i] = k_gain

        if i == steps:
            break
        try:
            if stepper is not None:
                x = stepper(lambda z: plant.rhs(z, u, w), x, cfg.dt)
            else:
                law, offset = controller.law(), measured - x
                x = radau_interval(lambda z: plant.rhs(z, law(z + offset), w), x, cfg.dt)
        except IntegrationFailure as e:
            logger.error("Interval integration failed", step=i, error=str(e))
            raise IntegrationFailure(f"integration failed at t={t:.4f}: {e}", recorder.record(i + 1, "integration"))
        except (ApproximationError, np.linalg.LinAlgError) as e:
            logger.error("Controller failed", step=i, time=t, error=str(e))
            raise ControllerFailure(f"controller failed at t={t:.4f}: {e}", recorder.record(i + 1, str(e)))
        if not np.all(np.isfinite(x)):
            logger.error("State became non-finite", step=i + 1)
            raise NonFiniteState(f"non-finite state at t={(i + 1) * cfg.dt:.4f}", recorder.record(i + 1, "non-finite"))

    logger.info("Simulation finished", samples=steps + 1, final_theta=float(x[0]))
    return recorder.record(steps + 1)


# ===== Metrics =====

def metrics(
    traj: TrajectoryRecord,
    desired: Sequence[float] = (0.0, 0.0, 0.0),
    signals: Sequence[int] = (0, 2, 3),
) -> Metrics:
    """
    IAE, ITAE over the tracked signals and control energy, by the trapezoidal rule.

    Args:
        traj: Recorded trajectory (non-empty)
        desired: Targets for the tracked signals
        signals: State indices tracked (theta, theta_dot, phi_dot by default)
    """
    if len(traj) == 0:
        raise ValueError("metrics need a non-empty trajectory")
    if len(desired) != len(signals):
        raise DimensionMismatch("desired must match the tracked signals")
    times = traj.times
    errors = np.abs(traj.states[:, list(signals)] - np.asarray(desired, dtype=float))
    if len(times) < 2:
        return Metrics(iae=0.0, itae=0.0, cef=0.0)

    iae = float(sum(trapezoid(errors[:, i], times) for i in range(errors.shape[1])))
    itae = float(sum(trapezoid(times * errors[:, i], times) for i in range(errors.shape[1])))
    cef = float(trapezoid(np.sum(traj.inputs ** 2, axis=1), times))
    return Metrics(iae=max(iae, 0.0), itae=max(itae, 0.0), cef=max(cef, 0.0))


def running_cef(traj: TrajectoryRecord) -> np.ndarray:
    """Cumulative control energy at each recorded sample."""
    power = np.sum(traj.inputs ** 2, axis=1)
    increments = 0.5 * (power[1:] + power[:-1]) * np.diff(traj.times)
    return np.concatenate([[0.0], np.cumsum(increments)])


# ===== Cases =====

CASE_STATE_NOISE = {1: 0.0, 2: 0.04, 3: 0.4}
CASE_CONTROLLERS = {
    1: tuple(ControllerKind),
    2: tuple(ControllerKind),
    3: (ControllerKind.SDRE, ControllerKind.H2HINF, ControllerKind.RNQG),
}


def case_sim_config(
    case_id: int,
    controller: ControllerKind,
    seed: int,
    config: Optional[ExperimentConfig] = None,
    noise: Optional[NoiseSpec] = None,
) -> SimConfig:
    """
    SimConfig for a benchmark case.

    Case 1: no injected noise, no disturbance. Cases 2 and 3: state noise
    std 0.04 and 0.4 with the configured disturbance (step at 10 s by default).
    """
    if case_id not in CASE_STATE_NOISE:
        raise ConfigError(f"case: must be one of 1, 2, 3 (got {case_id})")
    config = config or ExperimentConfig()
    sim = config.sim
    if noise is None:
        _, _, noise, _ = build_from_config(config)
    noise = noise.model_copy(update={"state_noise_std": CASE_STATE_NOISE[case_id], "seed": seed})

    if case_id == 1:
        disturbance = DisturbanceProfile(kind=DisturbanceKind.NONE)
    else:
        section = sim.disturbance
        disturbance = DisturbanceProfile(
            onset=section.onset,
            kind=DisturbanceKind(section.kind),
            magnitude=section.magnitude,
            duration=section.duration,
        )

    return SimConfig(
        dt=sim.dt,
        t_end=sim.t_end,
        integrator=Integrator(sim.integrator),
        x0=np.asarray(sim.x0, dtype=float),
        disturbance=disturbance,
        noise=noise,
        controller=ControllerKind(controller),
        resolve_every=sim.resolve_every,
        noise_into_plant=config.noise.noise_into_plant,
    )


def controller_for_config(
    kind: ControllerKind,
    config: ExperimentConfig,
    schedule: Optional[WeightSchedule] = None,
) -> Tuple[PlantModel, Controller]:
    """Plant and controller described by a config."""
    plant, weights, noise, _ = build_from_config(config)
    synth = Synthesizer(config.solver)
    kind = ControllerKind(kind)
    r_of_x = None
    if kind == ControllerKind.RNQG_APPROX:
        r_of_x = robust_stage_cost(plant, weights, config.train.dt).r_of_x
    controller = build_controller(
        kind, plant, weights, noise,
        synth=synth,
        schedule=schedule,
        resolve_every=config.sim.resolve_every,
        r_of_x=r_of_x,
    )
    return plant, controller


def run_case(
    case_id: int,
    controller: ControllerKind,
    seed: int,
    config: Optional[ExperimentConfig] = None,
    schedule: Optional[WeightSchedule] = None,
) -> Tuple[TrajectoryRecord, Metrics]:
    """
    Run a benchmark case and score it.

    Returns:
        (trajectory, metrics against the configured desired signals)
    """
    config = config or ExperimentConfig()
    plant, ctrl = controller_for_config(controller, config, schedule)
    cfg = case_sim_config(case_id, controller, seed, config)
    record = run(plant, ctrl, cfg)
    scores = metrics(record, config.sim.desired)
    logger.info("Case finished", case=case_id, controller=ControllerKind(controller).value, seed=seed,
                iae=scores.iae, itae=scores.itae, cef=scores.cef)
    return record, scores
