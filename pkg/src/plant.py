"""
State-dependent-coefficient plant helpers.
Validation of the A(x) x = f(x) factorization, checked weight evaluation,
and constant-coefficient (linear) plant and weight factories.
"""

from typing import Iterable, List, Optional

import numpy as np

from src.logger import logger
from src.models import (
    CostWeights,
    DimensionMismatch,
    PlantModel,
    PlantValidationReport,
    SdcEvaluation,
    WeightEvaluation,
)


class WeightError(Exception):
    """Q or S not symmetric PSD, or R not PD, at a queried state."""
    pass


# Relative tolerances for the weight checks
_WEIGHT_SYMMETRY_TOL = 1e-10
_WEIGHT_PSD_TOL = 1e-12

FACTORIZATION_TOL = 1e-10
ORIGIN_TOL = 1e-12


def _check_psd(name: str, mat: np.ndarray, strict: bool) -> None:
    scale = np.linalg.norm(mat)
    if np.linalg.norm(mat - mat.T) > _WEIGHT_SYMMETRY_TOL * max(scale, 1.0):
        raise WeightError(f"{name} is not symmetric")
    smallest = np.linalg.eigvalsh(0.5 * (mat + mat.T)).min()
    if strict and smallest <= 0:
        raise WeightError(f"{name} is not positive definite (min eigenvalue {smallest:.3e})")
    if not strict and smallest < -_WEIGHT_PSD_TOL * max(scale, 1.0):
        raise WeightError(f"{name} is not positive semidefinite (min eigenvalue {smallest:.3e})")


def evaluate_weights(
    weights: CostWeights,
    x: np.ndarray,
    dim_input: Optional[int] = None,
    dim_output: Optional[int] = None,
) -> WeightEvaluation:
    """
    Evaluate Q(x), R(x), S(x) and check their definiteness.

    Args:
        weights: Cost weights
        x: State at which to evaluate
        dim_input: Expected size of R, if known
        dim_output: Expected size of S, if known

    Returns:
        WeightEvaluation snapshot

    Raises:
        WeightError: definiteness or symmetry violated
        DimensionMismatch: wrong matrix sizes
    """
    n = len(x)
    q_mat = np.atleast_2d(np.asarray(weights.q_of_x(x), dtype=float))
    r_mat = np.atleast_2d(np.asarray(weights.r_of_x(x), dtype=float))
    s_mat = np.atleast_2d(np.asarray(weights.s_of_x(x), dtype=float))

    if q_mat.shape != (n, n):
        raise DimensionMismatch(f"Q(x) must be {n}x{n}, got {q_mat.shape}")
    if r_mat.shape[0] != r_mat.shape[1] or (dim_input is not None and r_mat.shape[0] != dim_input):
        raise DimensionMismatch(f"R(x) has shape {r_mat.shape}")
    if s_mat.shape[0] != s_mat.shape[1] or (dim_output is not None and s_mat.shape[0] != dim_output):
        raise DimensionMismatch(f"S(x) has shape {s_mat.shape}")

    _check_psd("Q(x)", q_mat, strict=False)
    _check_psd("R(x)", r_mat, strict=True)
    _check_psd("S(x)", s_mat, strict=False)

    return WeightEvaluation(
        q_mat=q_mat,
        r_mat=r_mat,
        s_mat=s_mat,
        gamma1=float(weights.gamma1),
        gamma2=float(weights.gamma2),
    )


def check_sdc_shapes(plant: PlantModel, coeffs: SdcEvaluation) -> None:
    """Raise DimensionMismatch unless every SDC matrix matches the plant dimensions."""
    n, m, r, q = plant.dim_state, plant.dim_input, plant.dim_output, plant.dim_disturbance
    expected = {
        "A": (coeffs.a_mat, (n, n)),
        "B": (coeffs.b_mat, (n, m)),
        "C": (coeffs.c_mat, (r, n)),
        "D": (coeffs.d_mat, (r, m)),
        "F": (coeffs.f_dist, (n, q)),
        "G": (coeffs.g_dist, (r, q)),
    }
    for name, (mat, shape) in expected.items():
        if mat.shape != shape:
            raise DimensionMismatch(f"{name}(x) must be {shape}, got {mat.shape}")


def validate_plant(
    plant: PlantModel,
    samples: Iterable[np.ndarray],
    weights: Optional[CostWeights] = None,
) -> PlantValidationReport:
    """
    Check the SDC factorization (and optionally the weights) at sample states.

    Args:
        plant: Plant to check
        samples: Non-empty collection of states
        weights: Optional cost weights to check at the same states

    Returns:
        PlantValidationReport; passes iff every sample satisfies
        ||A(x) x - f(x)|| <= 1e-10 (1 + ||f(x)||), f(0) = 0 and no weight violations
    """
    states = [np.asarray(x, dtype=float) for x in samples]
    if not states:
        raise ValueError("validate_plant needs at least one sample")

    violations: List[str] = []
    max_defect = 0.0
    max_relative = 0.0
    factorization_ok = True

    for x in states:
        if x.shape != (plant.dim_state,):
            raise DimensionMismatch(f"sample must have shape ({plant.dim_state},), got {x.shape}")
        coeffs = plant.sdc(x)
        check_sdc_shapes(plant, coeffs)
        drift = plant.drift(x)
        defect = float(np.linalg.norm(coeffs.a_mat @ x - drift))
        relative = defect / (1.0 + float(np.linalg.norm(drift)))
        max_defect = max(max_defect, defect)
        max_relative = max(max_relative, relative)
        if relative > FACTORIZATION_TOL:
            factorization_ok = False

        if weights is not None:
            try:
                evaluate_weights(weights, x, plant.dim_input, plant.dim_output)
            except WeightError as e:
                violations.append(f"Weights at {np.array2string(x, precision=4)}: {e}")

    if not factorization_ok:
        violations.append(f"Factorization: max defect {max_defect:.3e} (relative {max_relative:.3e})")

    origin_defect = float(np.linalg.norm(plant.drift(np.zeros(plant.dim_state))))
    if origin_defect > ORIGIN_TOL:
        violations.append(f"Origin: ||f(0)|| = {origin_defect:.3e}")

    report = PlantValidationReport(
        samples=len(states),
        max_defect=max_defect,
        max_relative_defect=max_relative,
        origin_defect=origin_defect,
        violations=violations,
        passed=not violations,
    )
    logger.info("Plant validated", plant=plant.name, samples=report.samples,
                max_defect=report.max_defect, passed=report.passed)
    return report


def linear_plant(
    a_mat: np.ndarray,
    b_mat: np.ndarray,
    c_mat: Optional[np.ndarray] = None,
    d_mat: Optional[np.ndarray] = None,
    f_dist: Optional[np.ndarray] = None,
    g_dist: Optional[np.ndarray] = None,
    name: str = "linear",
) -> PlantModel:
    """
    Constant-coefficient plant x' = A x + B u + F w.

    Unspecified channels default to C = I, D = 0 and a single zero disturbance column.
    """
    a_mat = np.atleast_2d(np.asarray(a_mat, dtype=float))
    b_mat = np.atleast_2d(np.asarray(b_mat, dtype=float))
    n, m = a_mat.shape[0], b_mat.shape[1]
    if a_mat.shape != (n, n) or b_mat.shape[0] != n:
        raise DimensionMismatch(f"A {a_mat.shape} and B {b_mat.shape} are inconsistent")

    c_mat = np.eye(n) if c_mat is None else np.atleast_2d(np.asarray(c_mat, dtype=float))
    r = c_mat.shape[0]
    d_mat = np.zeros((r, m)) if d_mat is None else np.atleast_2d(np.asarray(d_mat, dtype=float))
    f_dist = np.zeros((n, 1)) if f_dist is None else np.atleast_2d(np.asarray(f_dist, dtype=float))
    q = f_dist.shape[1]
    g_dist = np.zeros((r, q)) if g_dist is None else np.atleast_2d(np.asarray(g_dist, dtype=float))

    def drift(x: np.ndarray) -> np.ndarray:
        return a_mat @ x

    def sdc(x: np.ndarray) -> SdcEvaluation:
        return SdcEvaluation(
            a_mat=a_mat, b_mat=b_mat, c_mat=c_mat, d_mat=d_mat,
            f_dist=f_dist, g_dist=g_dist, state=np.array(x, dtype=float),
        )

    return PlantModel(
        name=name,
        dim_state=n,
        dim_input=m,
        dim_output=r,
        dim_disturbance=q,
        drift=drift,
        sdc=sdc,
    )


def constant_weights(
    q_mat: np.ndarray,
    r_mat: np.ndarray,
    s_mat: np.ndarray,
    gamma1: float = 5.0,
    gamma2: float = 5.0,
) -> CostWeights:
    """State-independent CostWeights."""
    q_mat = np.atleast_2d(np.asarray(q_mat, dtype=float))
    r_mat = np.atleast_2d(np.asarray(r_mat, dtype=float))
    s_mat = np.atleast_2d(np.asarray(s_mat, dtype=float))
    return CostWeights(
        q_of_x=lambda x: q_mat,
        r_of_x=lambda x: r_mat,
        s_of_x=lambda x: s_mat,
        gamma1=gamma1,
        gamma2=gamma2,
    )
