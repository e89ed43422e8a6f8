"""
Polynomial value-function approximation.

Offline: a backward recursion over a finite horizon fits per-step weights
W_k of a monomial basis by least squares on uniformly sampled states.
Online: the approximate controller u = -R^-1 B^T grad V needs only a basis
gradient evaluation instead of a Riccati solve.
"""

from functools import lru_cache
from itertools import combinations_with_replacement
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as spla

from src.logger import logger
from src.models import (
    BasisSpec,
    CostWeights,
    DimensionMismatch,
    PlantModel,
    StageCost,
    ValueEvaluation,
    WeightSchedule,
)


class ApproximationError(Exception):
    """Custom exception for value approximation errors."""
    pass


class RankDeficient(ApproximationError):
    """Sample matrix of the basis has rank below the basis size."""
    pass


RankDeficientBasis = RankDeficient


class NonFiniteTarget(ApproximationError):
    """A regression target is NaN or infinite."""
    pass


class SingularR(ApproximationError):
    """R(x) cannot be inverted."""
    pass


class InsufficientSamples(ApproximationError):
    """Fewer samples than basis functions."""
    pass


TRAIN_MODES = ("greedy", "drift-only")
CONVERGENCE_TOL = 1e-6


# ===== Basis =====

def monomial_basis(n: int, degree: int) -> BasisSpec:
    """
    All monomials in n variables with total degree 2..degree.

    Args:
        n: Number of state variables
        degree: Highest total degree (>= 2)

    Returns:
        BasisSpec ordered by degree, then by variable combination
    """
    if n < 1 or degree < 2:
        raise ValueError("need n >= 1 and degree >= 2")
    terms: List[Tuple[int, ...]] = []
    for order in range(2, degree + 1):
        for combo in combinations_with_replacement(range(n), order):
            powers = [0] * n
            for idx in combo:
                powers[idx] += 1
            terms.append(tuple(powers))
    return BasisSpec(degree=degree, terms=tuple(terms))


class MonomialBasis:
    """Vectorized evaluation of a BasisSpec with analytic derivatives."""

    def __init__(self, spec: BasisSpec):
        self.spec = spec
        self.n = spec.n_state
        self.count = spec.count
        self.exponents = np.array(spec.terms, dtype=float)

        # d/dx_i: coefficient e_i and exponents E - unit_i
        eye = np.eye(self.n)
        self.grad_coef = self.exponents.T.copy()
        self.grad_exp = np.clip(self.exponents[None, :, :] - eye[:, None, :], 0, None)

        # d2/dx_i dx_j
        hess_coef = np.empty((self.n, self.n, self.count))
        hess_exp = np.empty((self.n, self.n, self.count, self.n))
        for i in range(self.n):
            for j in range(self.n):
                if i == j:
                    hess_coef[i, j] = self.exponents[:, i] * (self.exponents[:, i] - 1)
                else:
                    hess_coef[i, j] = self.exponents[:, i] * self.exponents[:, j]
                hess_exp[i, j] = np.clip(self.exponents - eye[i] - eye[j], 0, None)
        self.hess_coef = hess_coef
        self.hess_exp = hess_exp

    def features(self, x: np.ndarray) -> np.ndarray:
        """Upsilon(x), a count-vector."""
        return np.prod(np.power(x, self.exponents), axis=1)

    def features_batch(self, states: np.ndarray) -> np.ndarray:
        """Upsilon for each row of an (eta x n) array, returned as (count x eta)."""
        return np.prod(np.power(states[:, None, :], self.exponents[None, :, :]), axis=2).T

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """d Upsilon / dx as (n x count)."""
        return self.grad_coef * np.prod(np.power(x, self.grad_exp), axis=2)

    def gradient(self, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        return self.jacobian(x) @ weights

    def hessian(self, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Hessian of W^T Upsilon at x (n x n)."""
        second = self.hess_coef * np.prod(np.power(x, self.hess_exp), axis=3)
        return second @ weights

    def gradient_batch(self, states: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """(eta x n) gradients of W^T Upsilon."""
        out = np.empty((len(states), self.n))
        for i in range(self.n):
            partial = np.prod(np.power(states[:, None, :], self.grad_exp[i][None]), axis=2)
            out[:, i] = partial @ (self.grad_coef[i] * weights)
        return out

    def hessian_batch(self, states: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """(eta x n x n) Hessians of W^T Upsilon."""
        out = np.empty((len(states), self.n, self.n))
        for i in range(self.n):
            for j in range(i, self.n):
                partial = np.prod(np.power(states[:, None, :], self.hess_exp[i, j][None]), axis=2)
                out[:, i, j] = out[:, j, i] = partial @ (self.hess_coef[i, j] * weights)
        return out


@lru_cache(maxsize=32)
def basis_functions(spec: BasisSpec) -> MonomialBasis:
    return MonomialBasis(spec)


def quadratic_weights(spec: BasisSpec, p_mat: np.ndarray) -> np.ndarray:
    """Weights reproducing V(x) = x^T P x on the degree-2 terms of a basis."""
    weights = np.zeros(spec.count)
    for idx, term in enumerate(spec.terms):
        if sum(term) != 2:
            continue
        active = [i for i, e in enumerate(term) for _ in range(e)]
        i, j = active
        weights[idx] = p_mat[i, i] if i == j else p_mat[i, j] + p_mat[j, i]
    return weights


# ===== Least squares =====

def least_squares_fit(upsilon: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """
    W minimizing sum_j (W^T Upsilon_j - nu_j)^2.

    Args:
        upsilon: (count x eta) sample matrix, one column per sample
        targets: eta-vector

    Returns:
        count-vector W

    Raises:
        RankDeficient, NonFiniteTarget
    """
    upsilon = np.atleast_2d(np.asarray(upsilon, dtype=float))
    targets = np.asarray(targets, dtype=float).ravel()
    count, eta = upsilon.shape
    if targets.shape != (eta,):
        raise DimensionMismatch(f"expected {eta} targets, got {targets.shape}")
    if not np.all(np.isfinite(targets)):
        raise NonFiniteTarget("least-squares targets contain NaN or inf")
    if eta < count:
        raise RankDeficient(f"{eta} samples cannot determine {count} weights")

    weights, _, rank, _ = spla.lstsq(upsilon.T, targets)
    if rank < count:
        raise RankDeficient(f"basis sample matrix has rank {rank} < {count}")
    return weights


# ===== Training =====

class _SampleSet:
    """Plant and cost data at one draw of training samples."""

    def __init__(self, states: np.ndarray, plant: PlantModel, cost: StageCost, functions: MonomialBasis):
        dt = cost.dt
        self.states = states
        self.drift_successors = np.array([x + dt * plant.drift(x) for x in states])
        self.input_maps = np.array([dt * plant.sdc(x).b_mat for x in states])
        self.input_weights = np.array([np.atleast_2d(cost.r_of_x(x)) for x in states])
        self.state_costs = np.array([x @ cost.q_of_x(x) @ x * dt for x in states])
        self.dt = dt
        # Offset row: the fitted constant absorbs the mean of terms the basis cannot span
        features = functions.features_batch(states)
        self.design = np.vstack([features, np.ones(len(states))])


def _draw_samples(rng: np.random.Generator, bounds: np.ndarray, eta: int, plant: PlantModel,
                  cost: StageCost, functions: MonomialBasis) -> _SampleSet:
    states = rng.uniform(bounds[:, 0], bounds[:, 1], size=(eta, plant.dim_state))
    return _SampleSet(states, plant, cost, functions)


def _step_targets(basis: MonomialBasis, w_next: np.ndarray, samples: _SampleSet, mode: str) -> np.ndarray:
    successors = samples.drift_successors
    if mode == "drift-only" or not np.any(w_next):
        return samples.state_costs + basis.features_batch(successors).T @ w_next

    # Exact minimizer of Theta(x, u) + V(x + dt (f + B u)) for quadratic V
    g_mats = samples.input_maps
    gradients = basis.gradient_batch(successors, w_next)
    hessians = basis.hessian_batch(successors, w_next)
    slope = np.einsum("jnm,jn->jm", g_mats, gradients)
    curvature = 2.0 * samples.dt * samples.input_weights + np.einsum("jnm,jnk,jkl->jml", g_mats, hessians, g_mats)
    try:
        inputs = -np.linalg.solve(curvature, slope[..., None])[..., 0]
    except np.linalg.LinAlgError:
        inputs = -np.einsum("jml,jl->jm", np.linalg.pinv(curvature), slope)

    successors = successors + np.einsum("jnm,jm->jn", g_mats, inputs)
    effort = np.einsum("jm,jml,jl->j", inputs, samples.input_weights, inputs) * samples.dt
    return samples.state_costs + effort + basis.features_batch(successors).T @ w_next


def train_weights(
    plant: PlantModel,
    basis: BasisSpec,
    cost: StageCost,
    horizon: int,
    eta: Optional[int],
    domain: Sequence[Tuple[float, float]],
    seed: int,
    mode: str = "greedy",
    resample: bool = False,
) -> WeightSchedule:
    """
    Backward recursion W_k^T Upsilon(x) = Theta(x, u) + W_{k+1}^T Upsilon(x+), k = N..0.

    Each fit carries an extra constant column that is dropped from W_k, so
    parts of the targets outside the basis span (the quartic terms of a
    state-dependent Q) do not leak into the other quadratic weights.

    By default the eta states are drawn once from the seeded generator and
    reused at every step, which makes the recursion a deterministic map on the
    weights with a fixed point the convergence test can detect. With
    `resample` a fresh set is drawn at every step from the same generator.

    Args:
        plant: Plant providing f(x) and B(x)
        basis: Monomial basis
        cost: Stage cost; its dt is the discretization step
        horizon: N >= 1
        eta: Number of samples (None for 50 * count)
        domain: Per-state (low, high) sampling bounds
        seed: Generator seed
        mode: "greedy" (minimize over u) or "drift-only" (u = 0)
        resample: Draw new samples at every step

    Returns:
        WeightSchedule with weights_by_step[k] = W_k

    Raises:
        InsufficientSamples, RankDeficient, NonFiniteTarget
    """
    if mode not in TRAIN_MODES:
        raise ValueError(f"unknown training mode '{mode}'")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if basis.n_state != plant.dim_state or len(domain) != plant.dim_state:
        raise DimensionMismatch("basis, domain and plant disagree on the state dimension")
    bounds = np.asarray(domain, dtype=float)
    if not np.all(np.isfinite(bounds)) or np.any(bounds[:, 0] >= bounds[:, 1]):
        raise ValueError("domain bounds must be finite with low < high")

    count = basis.count
    eta = 50 * count if eta is None else eta
    if eta <= count:
        raise InsufficientSamples(f"eta={eta} must exceed the basis size {count}")
    if eta < 2 * count:
        logger.warning("Sample count below twice the basis size", eta=eta, count=count)

    functions = basis_functions(basis)
    rng = np.random.default_rng(seed)
    samples = _draw_samples(rng, bounds, eta, plant, cost, functions)

    schedule = np.zeros((horizon + 1, count))
    w_next = np.zeros(count)
    deltas = np.zeros(horizon + 1)

    logger.info("Training value weights", horizon=horizon, eta=eta, count=count, mode=mode,
                seed=seed, resample=resample)
    for k in range(horizon, -1, -1):
        if resample and k < horizon:
            samples = _draw_samples(rng, bounds, eta, plant, cost, functions)
        targets = _step_targets(functions, w_next, samples, mode)
        w_k = least_squares_fit(samples.design, targets)[:count]
        if not np.all(np.isfinite(w_k)):
            raise NonFiniteTarget(f"weights at step {k} are not finite")
        schedule[k] = w_k
        deltas[k] = float(np.linalg.norm(w_k - w_next))
        w_next = w_k
        if k % 100 == 0:
            logger.debug("Backward step fitted", step=k, delta=deltas[k])

    converged = horizon >= 3 and all(
        deltas[k] <= CONVERGENCE_TOL * (1.0 + np.linalg.norm(schedule[k])) for k in range(3)
    )
    logger.info("Training finished", converged=converged, final_delta=float(deltas[0]))

    return WeightSchedule(
        weights_by_step=schedule,
        horizon=horizon,
        basis=basis,
        domain=tuple((float(lo), float(hi)) for lo, hi in bounds),
        eta=eta,
        seed=seed,
        converged=converged,
        mode=mode,
        dt=cost.dt,
        deltas=tuple(float(d) for d in deltas),
        resampled=resample,
    )


# ===== Online evaluation =====

def _in_domain(x: np.ndarray, domain: Sequence[Tuple[float, float]]) -> bool:
    return all(lo <= xi <= hi for xi, (lo, hi) in zip(x, domain))


def approx_value(x: np.ndarray, schedule: WeightSchedule, step: int = 0) -> ValueEvaluation:
    """
    V(x) = W_step^T Upsilon(x) and its gradient.

    Args:
        x: State
        schedule: Trained schedule
        step: Which W_k to use (0 is the online controller)

    Returns:
        ValueEvaluation with `extrapolated` set outside the training domain
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (schedule.basis.n_state,):
        raise DimensionMismatch(f"state must have shape ({schedule.basis.n_state},)")
    functions = basis_functions(schedule.basis)
    weights = schedule.weights_by_step[step]
    return ValueEvaluation(
        value=float(functions.features(x) @ weights),
        gradient=functions.gradient(x, weights),
        extrapolated=not _in_domain(x, schedule.domain),
    )


def approx_control(
    x: np.ndarray,
    schedule: WeightSchedule,
    r_of_x: Callable[[np.ndarray], np.ndarray],
    b_of_x: Callable[[np.ndarray], np.ndarray],
) -> np.ndarray:
    """
    u = -R(x)^-1 B(x)^T grad V(x).

    Raises:
        SingularR
    """
    x = np.asarray(x, dtype=float)
    gradient = basis_functions(schedule.basis).gradient(x, schedule.weights_by_step[0])
    r_mat = np.atleast_2d(r_of_x(x))
    try:
        return -np.linalg.solve(r_mat, np.atleast_2d(b_of_x(x)).T @ gradient)
    except np.linalg.LinAlgError as e:
        raise SingularR(f"R(x) is singular: {e}")


def hjbi_residual(
    x: np.ndarray,
    schedule: WeightSchedule,
    plant: PlantModel,
    r_of_x: Callable[[np.ndarray], np.ndarray],
) -> float:
    """
    State weight implied by the fitted value: Q~(x) = 1/2 grad V^T B R^-1 B^T grad V - grad V^T f(x).

    Zero-residual HJBI closure for the minimand grad V^T (f + B u) + Q~ + u^T (R/2) u.
    """
    x = np.asarray(x, dtype=float)
    gradient = approx_value(x, schedule).gradient
    b_mat = plant.sdc(x).b_mat
    projected = b_mat.T @ gradient
    try:
        quad = projected @ np.linalg.solve(np.atleast_2d(r_of_x(x)), projected)
    except np.linalg.LinAlgError as e:
        raise SingularR(f"R(x) is singular: {e}")
    return float(0.5 * quad - gradient @ plant.drift(x))


# ===== Stage costs =====

def stage_cost(weights: CostWeights, dt: float) -> StageCost:
    """Theta(x, u) = (x^T Q(x) x + u^T R(x) u) dt."""
    return StageCost(q_of_x=weights.q_of_x, r_of_x=weights.r_of_x, dt=dt)


def robust_stage_cost(plant: PlantModel, weights: CostWeights, dt: float) -> StageCost:
    """Stage cost with the output penalty folded in: Q + C^T S C and R + D^T S D."""

    def q_of_x(x: np.ndarray) -> np.ndarray:
        coeffs = plant.sdc(x)
        return weights.q_of_x(x) + coeffs.c_mat.T @ weights.s_of_x(x) @ coeffs.c_mat

    def r_of_x(x: np.ndarray) -> np.ndarray:
        coeffs = plant.sdc(x)
        return weights.r_of_x(x) + coeffs.d_mat.T @ weights.s_of_x(x) @ coeffs.d_mat

    return StageCost(q_of_x=q_of_x, r_of_x=r_of_x, dt=dt)
