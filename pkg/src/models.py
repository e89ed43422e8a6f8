"""
Data models for the RNQG control toolkit.
Pydantic models for type safety and validation; matrices are numpy arrays.
"""

from datetime import datetime
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator


class DimensionMismatch(ValueError):
    """Raised when matrix or vector shapes are inconsistent."""
    pass


class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# ===== Riccati =====

class CareProblem(_ArrayModel):
    """A^T P + P A - P B R^-1 B^T P + Q = 0."""
    a_mat: np.ndarray
    b_mat: np.ndarray
    q_mat: np.ndarray
    r_mat: np.ndarray

    @property
    def n(self) -> int:
        return self.a_mat.shape[0]

    @property
    def m(self) -> int:
        return self.b_mat.shape[1]


class GeneralizedCareProblem(_ArrayModel):
    """P Acl + Acl^T P + Lam2 + P Lam3 P = 0 (P symmetric, so P Lam3 P^T = P Lam3 P)."""
    acl_mat: np.ndarray
    lam2_mat: np.ndarray
    lam3_mat: np.ndarray

    @property
    def n(self) -> int:
        return self.acl_mat.shape[0]


class RiccatiSolution(_ArrayModel):
    p_mat: np.ndarray
    residual_norm: float = Field(ge=0)
    stable: bool
    closed_loop_abscissa: float
    refined: bool = False


# ===== Plant, noise, weights =====

class SdcEvaluation(_ArrayModel):
    """State-dependent coefficient matrices evaluated at `state`."""
    a_mat: np.ndarray
    b_mat: np.ndarray
    c_mat: np.ndarray
    d_mat: np.ndarray
    f_dist: np.ndarray
    g_dist: np.ndarray
    state: np.ndarray


class NoiseSpec(_ArrayModel):
    """Noise intensities used by synthesis plus the injected-noise realization settings."""
    l_mat: np.ndarray
    h_mat: np.ndarray
    state_noise_std: float = Field(default=0.0, ge=0)
    measurement_noise_std: float = Field(default=0.0, ge=0)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)

    @property
    def dim_process_noise(self) -> int:
        return self.l_mat.shape[1]


class CostWeights(_ArrayModel):
    q_of_x: Callable[[np.ndarray], np.ndarray]
    r_of_x: Callable[[np.ndarray], np.ndarray]
    s_of_x: Callable[[np.ndarray], np.ndarray]
    gamma1: float
    gamma2: float


class WeightEvaluation(_ArrayModel):
    """CostWeights evaluated (and checked) at one state."""
    q_mat: np.ndarray
    r_mat: np.ndarray
    s_mat: np.ndarray
    gamma1: float
    gamma2: float


class PlantModel(_ArrayModel):
    """Control-affine plant x' = f(x) + B(x) u + F(x) w with an SDC factorization f(x) = A(x) x."""
    name: str = "plant"
    dim_state: int = Field(ge=1)
    dim_input: int = Field(ge=1)
    dim_output: int = Field(ge=1)
    dim_disturbance: int = Field(ge=1)
    dim_process_noise: int = Field(default=1, ge=1)
    drift: Callable[[np.ndarray], np.ndarray]
    sdc: Callable[[np.ndarray], SdcEvaluation]

    def rhs(self, x: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        """State derivative with input and disturbance held."""
        coeffs = self.sdc(x)
        return self.drift(x) + coeffs.b_mat @ u + coeffs.f_dist @ w


class PlantValidationReport(BaseModel):
    samples: int
    max_defect: float
    max_relative_defect: float
    origin_defect: float
    violations: List[str] = []
    passed: bool


# ===== Synthesis =====

class Scheme(str, Enum):
    SDRE = "SDRE"
    H2HINF = "H2HINF"
    RNQG = "RNQG"


class MBlocks(_ArrayModel):
    """Blocks of the (x, w, v) quadratic form."""
    m1: np.ndarray
    m2: np.ndarray
    m3: np.ndarray
    m4: np.ndarray
    m5: np.ndarray
    m6: np.ndarray

    def assemble(self) -> np.ndarray:
        return np.block([
            [self.m1, self.m2, self.m3],
            [self.m2.T, self.m4, self.m5],
            [self.m3.T, self.m5.T, self.m6],
        ])


class SchurReduction(_ArrayModel):
    z1: np.ndarray
    z2: np.ndarray
    z3: np.ndarray
    complement: np.ndarray


class GammaBlocks(_ArrayModel):
    gamma1_blk: np.ndarray
    gamma2_blk: np.ndarray
    gamma3_blk: np.ndarray
    gamma4_blk: np.ndarray
    m6_blk: np.ndarray
    lambda_small: Tuple[np.ndarray, ...]
    lambda_big: Tuple[np.ndarray, ...]
    gamma3_symmetry_defect: float = 0.0


class GainDiagnostics(BaseModel):
    riccati_residual: float
    gamma_residual: Optional[float] = None
    spectral_abscissa: float
    closed_loop_stable: bool
    path: str = "care"
    iterations: int = 0
    gamma3_symmetry_defect: float = 0.0


class GainSolution(_ArrayModel):
    """u = K x with K evaluated at one state."""
    k_gain: np.ndarray
    p_mat: np.ndarray
    scheme: Scheme
    diagnostics: GainDiagnostics


# ===== Value approximation =====

class BasisSpec(BaseModel):
    """Monomial basis; each term is a tuple of exponents over the state variables."""
    model_config = ConfigDict(frozen=True)

    degree: int = Field(ge=2)
    terms: Tuple[Tuple[int, ...], ...]

    @field_validator("terms")
    @classmethod
    def _check_terms(cls, terms: Tuple[Tuple[int, ...], ...]) -> Tuple[Tuple[int, ...], ...]:
        if not terms:
            raise ValueError("basis needs at least one term")
        if len(set(terms)) != len(terms):
            raise ValueError("basis terms must be distinct")
        widths = {len(t) for t in terms}
        if len(widths) != 1:
            raise ValueError("all terms must span the same number of states")
        for term in terms:
            if min(term) < 0 or sum(term) < 2:
                raise ValueError(f"term {term} must have nonnegative exponents and total degree >= 2")
        return terms

    @property
    def count(self) -> int:
        return len(self.terms)

    @property
    def n_state(self) -> int:
        return len(self.terms[0])


class StageCost(_ArrayModel):
    """Theta(x, u) = (x^T Q(x) x + u^T R(x) u) * dt."""
    q_of_x: Callable[[np.ndarray], np.ndarray]
    r_of_x: Callable[[np.ndarray], np.ndarray]
    dt: float = Field(gt=0)

    def theta(self, x: np.ndarray, u: np.ndarray) -> float:
        return float((x @ self.q_of_x(x) @ x + u @ self.r_of_x(x) @ u) * self.dt)


class WeightSchedule(_ArrayModel):
    """Per-step weights; weights_by_step[k] is W_k for k = 0..horizon."""
    weights_by_step: np.ndarray
    horizon: int = Field(ge=1)
    basis: BasisSpec
    domain: Tuple[Tuple[float, float], ...]
    eta: int = Field(ge=1)
    seed: int = Field(ge=0, lt=2 ** 64)
    converged: bool
    mode: str = "greedy"
    dt: float = Field(default=0.01, gt=0)
    deltas: Tuple[float, ...] = ()
    resampled: bool = False

    @property
    def final_weights(self) -> np.ndarray:
        return self.weights_by_step[0]


class ValueEvaluation(_ArrayModel):
    value: float
    gradient: np.ndarray
    extrapolated: bool = False


# ===== Pendulum =====

class PendulumParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    m_p: float = Field(default=0.6, gt=0)
    m_w: float = Field(default=0.31, gt=0)
    l_g: float = Field(default=0.10, gt=0)
    l_e: float = Field(default=0.14, gt=0)
    i_p: float = Field(default=0.0023, gt=0)
    i_w: float = Field(default=0.001, gt=0)
    g: float = Field(default=9.81, gt=0)

    @property
    def derived(self) -> "DerivedConstants":
        return DerivedConstants(
            c_t=(self.m_p * self.l_g + self.m_w * self.l_e) * self.g,
            i_t=self.m_p * self.l_g ** 2 + self.m_w * self.l_e ** 2 + self.i_p,
        )


class DerivedConstants(BaseModel):
    model_config = ConfigDict(frozen=True)

    c_t: float
    i_t: float


class MotorParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    l_m: float = Field(gt=0)
    r_m: float = Field(gt=0)
    k_e: float = Field(gt=0)
    k_t: float = Field(gt=0)
    n_g: float = Field(gt=0)


class VoltageProfile(_ArrayModel):
    times: np.ndarray
    current: np.ndarray
    current_rate: np.ndarray
    motor_speed: np.ndarray
    voltage: np.ndarray


# ===== Simulation =====

class ControllerKind(str, Enum):
    SDRE = "sdre"
    SDRE_APPROX = "sdre-approx"
    H2HINF = "h2hinf"
    RNQG = "rnqg"
    RNQG_APPROX = "rnqg-approx"

    @property
    def is_approximate(self) -> bool:
        return self in (ControllerKind.SDRE_APPROX, ControllerKind.RNQG_APPROX)


class Integrator(str, Enum):
    """EULER and RK4 hold u over the step; RADAU holds the gain and evaluates the feedback law."""
    EULER = "euler"
    RK4 = "rk4"
    RADAU = "radau"


class DisturbanceKind(str, Enum):
    STEP = "step"
    PULSE = "pulse"
    NONE = "none"


class DisturbanceProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    onset: float = Field(default=10.0, ge=0)
    kind: DisturbanceKind = DisturbanceKind.STEP
    magnitude: float = 0.05
    duration: Optional[float] = Field(default=None, gt=0)

    def value_at(self, t: float) -> float:
        """Scalar disturbance level at time t (applied to every disturbance channel)."""
        if self.kind == DisturbanceKind.NONE or t < self.onset:
            return 0.0
        if self.kind == DisturbanceKind.PULSE and t >= self.onset + (self.duration or 0.0):
            return 0.0
        return self.magnitude


class SimConfig(_ArrayModel):
    dt: float = Field(default=0.01, gt=0)
    t_end: float = Field(default=20.0, gt=0)
    integrator: Integrator = Integrator.RADAU
    x0: np.ndarray
    disturbance: DisturbanceProfile = Field(default_factory=lambda: DisturbanceProfile(kind=DisturbanceKind.NONE))
    noise: NoiseSpec
    controller: ControllerKind = ControllerKind.SDRE
    resolve_every: int = Field(default=1, ge=1)
    noise_into_plant: bool = False

    @field_validator("t_end")
    @classmethod
    def _check_horizon(cls, t_end: float, info) -> float:
        dt = info.data.get("dt")
        if dt is not None and t_end < dt:
            raise ValueError("t_end must be at least dt")
        return t_end

    @property
    def steps(self) -> int:
        # Small epsilon keeps t_end/dt = 2000 from flooring to 1999.
        return int(np.floor(self.t_end / self.dt + 1e-9))


class TrajectoryRecord(_ArrayModel):
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    noises: np.ndarray
    measurement_noises: np.ndarray
    disturbances: np.ndarray
    gains: Optional[np.ndarray] = None
    error: Optional[str] = None

    def __len__(self) -> int:
        return len(self.times)


class Metrics(BaseModel):
    iae: float = Field(ge=0)
    itae: float = Field(ge=0)
    cef: float = Field(ge=0)


class RunManifest(BaseModel):
    command: str
    config_path: Optional[str] = None
    config_sha256: str
    code_version: str
    seeds: List[int] = []
    output_dir: str
    started_at: datetime = Field(default_factory=datetime.utcnow)
    finished_at: Optional[datetime] = None


class ComparisonRow(BaseModel):
    """Median and interquartile range of each metric across seeds."""
    case: int
    controller: ControllerKind
    seeds: int
    failures: int = 0
    iae_median: float
    iae_iqr: float
    itae_median: float
    itae_iqr: float
    cef_median: float
    cef_iqr: float
