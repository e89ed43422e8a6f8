"""
Configuration management for the RNQG control toolkit.
Runtime settings come from environment variables; experiment parameters
come from a single JSON config file validated into typed sections.
"""

import hashlib
import json
import math
import re
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class ConfigError(Exception):
    """Raised when an experiment config file cannot be read or validated."""
    pass


class Settings(BaseSettings):
    """Runtime settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="RNQG_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )

    environment: str = Field(default="development", description="Environment: development, production")
    log_level: str = Field(default="INFO", description="Logging level")
    log_file: Optional[str] = Field(default=None, description="Optional JSON log file path")
    results_dir: str = Field(default="results", description="Default output directory for run artifacts")
    jobs: int = Field(default=1, ge=1, description="Default worker processes for seed sweeps")

    def is_production(self) -> bool:
        """Check if running in production environment."""
        return self.environment.lower() == "production"

    def is_development(self) -> bool:
        """Check if running in development environment."""
        return self.environment.lower() == "development"


# ===== Experiment config file =====

_ANGLE_PATTERN = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(deg|rad)?\s*$")


def parse_angle(value: Any) -> float:
    """
    Parse a number or a `deg`/`rad` suffixed string into radians.

    Args:
        value: float, int or string such as "20deg", "0.35rad", "1.5"

    Returns:
        Value in radians (unsuffixed values are taken as radians)
    """
    if isinstance(value, bool):
        raise ValueError("angle must be a number or a deg/rad suffixed string")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        match = _ANGLE_PATTERN.match(value)
        if not match:
            raise ValueError(f"cannot parse angle '{value}' (expected e.g. '20deg' or '0.35rad')")
        number = float(match.group(1))
        if match.group(2) == "deg":
            return math.radians(number)
        return number
    raise ValueError(f"unsupported angle value {value!r}")


Angle = Annotated[float, BeforeValidator(parse_angle)]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PendulumSection(_Section):
    """Flywheel pendulum parameters; defaults are the published benchmark values."""
    m_p: float = Field(default=0.6, gt=0, description="Pendulum mass, kg")
    m_w: float = Field(default=0.31, gt=0, description="Flywheel mass, kg")
    l_g: float = Field(default=0.10, gt=0, description="Pivot to pendulum CG, m")
    l_e: float = Field(default=0.14, gt=0, description="Elbow length, m")
    i_p: float = Field(default=0.0023, gt=0, description="Pendulum inertia, kg m^2")
    i_w: float = Field(default=0.001, gt=0, description="Flywheel inertia, kg m^2")
    g: float = Field(default=9.81, gt=0, description="Gravity, m/s^2")


class MotorSection(_Section):
    """DC motor parameters; no defaults are shipped."""
    l_m: float = Field(..., gt=0, description="Coil inductance, H")
    r_m: float = Field(..., gt=0, description="Coil resistance, Ohm")
    k_e: float = Field(..., gt=0, description="Back-EMF constant, V s/rad")
    k_t: float = Field(..., gt=0, description="Torque constant, N m/A")
    n_g: float = Field(..., gt=0, description="Gear ratio")


class PlantSection(_Section):
    pendulum: PendulumSection = Field(default_factory=PendulumSection)
    motor: Optional[MotorSection] = None
    disturbance_map: Literal["matched", "none"] = "matched"
    c_mat: Optional[List[List[float]]] = None
    d_mat: Optional[List[List[float]]] = None
    g_mat: Optional[List[List[float]]] = None


class WeightsSection(_Section):
    """Q(x) = diag(q_diag_base + q_diag_quadratic * x^2), R = diag(r_diag), S = diag(s_diag)."""
    q_diag_base: List[float] = Field(default_factory=lambda: [1.0, 1.0, 1.0, 1.0])
    q_diag_quadratic: List[float] = Field(default_factory=lambda: [1.0, 1.0, 1.0, 1.0])
    r_diag: List[float] = Field(default_factory=lambda: [1.0])
    s_diag: List[float] = Field(default_factory=lambda: [1.0, 1.0, 1.0, 1.0])
    gamma1: float = 5.0
    gamma2: float = 5.0


class NoiseSection(_Section):
    l_scale: float = Field(default=0.01, ge=0, description="Process-noise intensity, L = B * l_scale")
    h_value: float = Field(default=0.01, description="Measurement-noise intensity, H = h_value * ones(r, 1)")
    state_noise_std: float = Field(default=0.0, ge=0, description="Std of the noise added to states (q)")
    measurement_noise_std: float = Field(default=0.0, ge=0, description="Std of the output noise realization")
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    noise_into_plant: bool = False


class DisturbanceSection(_Section):
    kind: Literal["step", "pulse", "none"] = "step"
    onset: float = Field(default=10.0, ge=0)
    magnitude: float = 0.05
    duration: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _pulse_needs_duration(self) -> "DisturbanceSection":
        if self.kind == "pulse" and self.duration is None:
            raise ValueError("pulse disturbance requires 'duration'")
        return self


class SimSection(_Section):
    dt: float = Field(default=0.01, gt=0)
    t_end: float = Field(default=20.0, gt=0)
    integrator: Literal["radau", "rk4", "euler"] = "radau"
    x0: List[Angle] = Field(default_factory=lambda: [math.radians(20.0), 0.0, 0.01, 0.0])
    resolve_every: int = Field(default=1, ge=1)
    disturbance: DisturbanceSection = Field(default_factory=DisturbanceSection)
    desired: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])

    @model_validator(mode="after")
    def _horizon_covers_step(self) -> "SimSection":
        if self.t_end < self.dt:
            raise ValueError("t_end must be at least dt")
        return self


def _default_domain() -> List[Tuple[float, float]]:
    return [(-math.pi / 6, math.pi / 6), (-math.pi / 3, math.pi / 3), (-1.0, 1.0), (-1.0, 1.0)]


class TrainSection(_Section):
    degree: int = Field(default=2, ge=2, le=6)
    horizon: int = Field(default=3000, ge=1)
    eta: Optional[int] = Field(default=None, ge=1, description="Samples per fit; null for 50 * basis count")
    dt: float = Field(default=0.01, gt=0)
    mode: Literal["greedy", "drift-only"] = "greedy"
    resample: bool = Field(default=False, description="Draw fresh samples at every backward step")
    domain: List[Tuple[Angle, Angle]] = Field(default_factory=_default_domain)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)

    @model_validator(mode="after")
    def _finite_domain(self) -> "TrainSection":
        for low, high in self.domain:
            if not (math.isfinite(low) and math.isfinite(high)) or low >= high:
                raise ValueError("domain bounds must be finite with low < high")
        return self


class SolverSettings(_Section):
    """Numerical tolerances for Riccati solves and gain synthesis."""
    symmetry_tol: float = Field(default=1e-12, gt=0)
    imag_axis_tol: float = Field(default=1e-9, gt=0)
    residual_tol: float = Field(default=1e-8, gt=0)
    lam3_tol: float = Field(default=1e-10, gt=0)
    gamma3_symmetry_tol: float = Field(default=1e-10, gt=0)
    fixed_point_tol: float = Field(default=1e-8, gt=0)
    fixed_point_max_iter: int = Field(default=50, ge=1)
    literal_gain_formula: bool = False


class ExperimentConfig(_Section):
    """Top-level experiment config; an empty object reproduces the default study."""
    plant: PlantSection = Field(default_factory=PlantSection)
    weights: WeightsSection = Field(default_factory=WeightsSection)
    noise: NoiseSection = Field(default_factory=NoiseSection)
    sim: SimSection = Field(default_factory=SimSection)
    train: TrainSection = Field(default_factory=TrainSection)
    solver: SolverSettings = Field(default_factory=SolverSettings)


def _format_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item.get("loc", ()))
        parts.append(f"{location or '<root>'}: {item.get('msg')}")
    return "; ".join(parts)


def parse_experiment_config(data: Dict[str, Any]) -> ExperimentConfig:
    """
    Validate a decoded config object.

    Raises:
        ConfigError: naming every offending field
    """
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid config: {_format_validation_error(e)}")


def load_experiment_config(path: Optional[Union[str, Path]] = None) -> Tuple[ExperimentConfig, str]:
    """
    Load and validate an experiment config file.

    Args:
        path: JSON config file, or None for the defaults

    Returns:
        (config, sha256 hex digest of the file bytes or of the canonical default JSON)
    """
    if path is None:
        config = ExperimentConfig()
        return config, config_digest(config)

    config_path = Path(path)
    try:
        raw = config_path.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read config file {config_path}: {e}")
    try:
        data = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"config file {config_path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a JSON object")

    return parse_experiment_config(data), hashlib.sha256(raw).hexdigest()


def config_digest(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form of a config."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# Global settings instance
settings = Settings()
