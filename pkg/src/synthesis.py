"""
Gain synthesis for the SDRE, H2-Hinf and RNQG controllers.

The robust cost couples state, disturbance w and process noise v in one
quadratic form xi^T M xi. Reducing M by Schur complements gives an n x n
matrix that is quadratic in the gain K:

    Gamma1 + Gamma2 K + K^T Gamma2^T + K^T Gamma3 K

Completing the square yields K = -Gamma3^-1 Gamma2^T, and setting the
minimum to zero is a generalized Riccati equation in P.
"""

from typing import Optional, Tuple

import numpy as np

from src.config import SolverSettings
from src.logger import logger
from src.models import (
    CareProblem,
    CostWeights,
    DimensionMismatch,
    GainDiagnostics,
    GainSolution,
    GammaBlocks,
    GeneralizedCareProblem,
    MBlocks,
    NoiseSpec,
    Scheme,
    SchurReduction,
    SdcEvaluation,
    WeightEvaluation,
)
from src.plant import evaluate_weights
from src.riccati import IllConditioned, RiccatiSolver


class SynthesisError(Exception):
    """Custom exception for gain synthesis errors."""
    pass


class SingularM6(SynthesisError):
    """M6 = H^T S H + gamma2^2 I is singular."""
    pass


class SingularGamma4Core(SynthesisError):
    """M4 - M5 M6^-1 M5^T is singular."""
    pass


class SingularGamma3(SynthesisError):
    """Gamma3 (the effective input weight) is singular or ill-conditioned."""
    pass


class NoConvergence(SynthesisError):
    """Newton-Kleinman refinement hit its iteration cap."""
    pass


_MAX_COND = 1e12


def _symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def _inverse(mat: np.ndarray, error: type, name: str) -> np.ndarray:
    try:
        if not np.all(np.isfinite(mat)) or np.linalg.cond(mat) > _MAX_COND:
            raise error(f"{name} is singular or ill-conditioned")
        return np.linalg.inv(mat)
    except np.linalg.LinAlgError as e:
        raise error(f"{name} is singular: {e}")


def _check_noise(sdc: SdcEvaluation, noise: NoiseSpec) -> None:
    n, r = sdc.a_mat.shape[0], sdc.c_mat.shape[0]
    if noise.l_mat.ndim != 2 or noise.l_mat.shape[0] != n:
        raise DimensionMismatch(f"L must have {n} rows, got {noise.l_mat.shape}")
    if noise.h_mat.shape != (r, noise.l_mat.shape[1]):
        raise DimensionMismatch(f"H must be {r}x{noise.l_mat.shape[1]}, got {noise.h_mat.shape}")


def zero_noise(sdc: SdcEvaluation) -> NoiseSpec:
    """L = 0 (n x 1) and H = 0 (r x 1)."""
    return NoiseSpec(
        l_mat=np.zeros((sdc.a_mat.shape[0], 1)),
        h_mat=np.zeros((sdc.c_mat.shape[0], 1)),
    )


def build_m_blocks(
    sdc: SdcEvaluation,
    weights: WeightEvaluation,
    noise: NoiseSpec,
    p_mat: np.ndarray,
    k_gain: np.ndarray,
) -> MBlocks:
    """
    Blocks of the (x, w, v) quadratic form for a given P and K (P_dot = 0).

    Args:
        sdc: SDC matrices at the current state
        weights: Evaluated Q, R, S, gamma1, gamma2
        noise: Intensities L and H
        p_mat: Symmetric n x n
        k_gain: m x n

    Returns:
        MBlocks M1..M6
    """
    _check_noise(sdc, noise)
    n, m = sdc.b_mat.shape
    if p_mat.shape != (n, n):
        raise DimensionMismatch(f"P must be {n}x{n}, got {p_mat.shape}")
    if k_gain.shape != (m, n):
        raise DimensionMismatch(f"K must be {m}x{n}, got {k_gain.shape}")

    s_mat = weights.s_mat
    a_cl = sdc.a_mat + sdc.b_mat @ k_gain
    c_cl = sdc.c_mat + sdc.d_mat @ k_gain
    q_w, p_v = sdc.f_dist.shape[1], noise.l_mat.shape[1]

    return MBlocks(
        m1=(p_mat @ a_cl + a_cl.T @ p_mat + weights.q_mat
            + k_gain.T @ weights.r_mat @ k_gain + c_cl.T @ s_mat @ c_cl),
        m2=p_mat @ sdc.f_dist + c_cl.T @ s_mat @ sdc.g_dist,
        m3=p_mat @ noise.l_mat + c_cl.T @ s_mat @ noise.h_mat,
        m4=sdc.g_dist.T @ s_mat @ sdc.g_dist + weights.gamma1 ** 2 * np.eye(q_w),
        m5=sdc.g_dist.T @ s_mat @ noise.h_mat,
        m6=noise.h_mat.T @ s_mat @ noise.h_mat + weights.gamma2 ** 2 * np.eye(p_v),
    )


def schur_reduction(blocks: MBlocks) -> SchurReduction:
    """
    Nested Schur complement of M: first eliminate the v block, then the w block.

    Returns:
        Z1, Z2, Z3 of the first reduction and the final n x n complement
        Z1 - Z2 Z3^-1 Z2^T
    """
    m6_inv = _inverse(blocks.m6, SingularM6, "M6")
    z1 = blocks.m1 - blocks.m3 @ m6_inv @ blocks.m3.T
    z2 = blocks.m2 - blocks.m3 @ m6_inv @ blocks.m5.T
    z3 = blocks.m4 - blocks.m5 @ m6_inv @ blocks.m5.T
    complement = z1 - z2 @ _inverse(z3, SingularGamma4Core, "Z3") @ z2.T
    return SchurReduction(z1=z1, z2=z2, z3=z3, complement=complement)


def build_gamma_blocks(
    sdc: SdcEvaluation,
    weights: WeightEvaluation,
    noise: NoiseSpec,
    p_mat: np.ndarray,
    gamma3_symmetry_tol: float = 1e-10,
) -> GammaBlocks:
    """
    Gamma and lambda/Lambda blocks at a given P.

    The Lambda blocks do not depend on P; Gamma1 and Gamma2 do.

    Raises:
        SingularM6, SingularGamma4Core, SingularGamma3, DimensionMismatch
    """
    _check_noise(sdc, noise)
    n = sdc.a_mat.shape[0]
    if p_mat.shape != (n, n):
        raise DimensionMismatch(f"P must be {n}x{n}, got {p_mat.shape}")

    a_mat, b_mat, c_mat, d_mat = sdc.a_mat, sdc.b_mat, sdc.c_mat, sdc.d_mat
    f_mat, g_mat = sdc.f_dist, sdc.g_dist
    l_mat, h_mat = noise.l_mat, noise.h_mat
    q_mat, r_mat, s_mat = weights.q_mat, weights.r_mat, weights.s_mat
    q_w, p_v = f_mat.shape[1], l_mat.shape[1]
    if g_mat.shape[1] != q_w:
        raise DimensionMismatch("F and G disagree on the disturbance dimension")

    m6 = h_mat.T @ s_mat @ h_mat + weights.gamma2 ** 2 * np.eye(p_v)
    m6_inv = _inverse(m6, SingularM6, "M6")

    # S - S H M6^-1 H^T S: the output weight left after eliminating v
    s_hat = s_mat - s_mat @ h_mat @ m6_inv @ h_mat.T @ s_mat
    m4 = g_mat.T @ s_mat @ g_mat + weights.gamma1 ** 2 * np.eye(q_w)
    m5 = g_mat.T @ s_mat @ h_mat
    gamma4 = _symmetrize(_inverse(m4 - m5 @ m6_inv @ m5.T, SingularGamma4Core, "Gamma4 core"))

    lam1 = gamma4 @ g_mat.T @ s_hat @ d_mat
    lam3 = f_mat - l_mat @ m6_inv @ h_mat.T @ s_mat @ g_mat
    lam4 = c_mat.T @ s_hat @ g_mat
    lam5 = c_mat.T @ s_hat @ d_mat
    lam6 = b_mat - l_mat @ m6_inv @ h_mat.T @ s_mat @ d_mat

    gamma3_raw = r_mat + d_mat.T @ s_hat @ d_mat - d_mat.T @ s_hat @ g_mat @ gamma4 @ g_mat.T @ s_hat @ d_mat
    scale = max(np.linalg.norm(gamma3_raw), 1e-300)
    defect = float(np.linalg.norm(gamma3_raw - gamma3_raw.T) / scale)
    if defect > gamma3_symmetry_tol:
        logger.warning("Gamma3 asymmetry above tolerance", defect=defect, tol=gamma3_symmetry_tol)
    gamma3 = _symmetrize(gamma3_raw)
    lam2 = _inverse(gamma3, SingularGamma3, "Gamma3")

    alpha = lam6 - lam3 @ lam1
    beta = lam5 - lam4 @ lam1
    cross = l_mat @ m6_inv @ h_mat.T @ s_mat @ c_mat

    big1 = -cross - lam3 @ gamma4 @ lam4.T - alpha @ lam2 @ beta.T
    big2 = _symmetrize(q_mat + c_mat.T @ s_hat @ c_mat - lam4 @ gamma4 @ lam4.T - beta @ lam2 @ beta.T)
    big3 = _symmetrize(-l_mat @ m6_inv @ l_mat.T - lam3 @ gamma4 @ lam3.T - alpha @ lam2 @ alpha.T)

    # Gamma1 and Gamma2 are the only P-dependent blocks
    b_noise = p_mat @ l_mat + c_mat.T @ s_mat @ h_mat
    z2_free = p_mat @ lam3 + lam4
    gamma1 = _symmetrize(
        p_mat @ a_mat + a_mat.T @ p_mat + q_mat + c_mat.T @ s_mat @ c_mat
        - b_noise @ m6_inv @ b_noise.T - z2_free @ gamma4 @ z2_free.T
    )
    gamma2 = p_mat @ alpha + beta

    return GammaBlocks(
        gamma1_blk=gamma1,
        gamma2_blk=gamma2,
        gamma3_blk=gamma3,
        gamma4_blk=gamma4,
        m6_blk=m6,
        lambda_small=(lam1, lam2, lam3, lam4, lam5, lam6),
        lambda_big=(big1, big2, big3),
        gamma3_symmetry_defect=defect,
    )


def gamma_residual(blocks: GammaBlocks) -> float:
    """||Gamma1 - Gamma2 Gamma3^-1 Gamma2^T||_F, zero at the optimal P."""
    reduced = blocks.gamma1_blk - blocks.gamma2_blk @ np.linalg.solve(blocks.gamma3_blk, blocks.gamma2_blk.T)
    return float(np.linalg.norm(reduced))


def optimal_gain(blocks: GammaBlocks) -> np.ndarray:
    """K = -Gamma3^-1 Gamma2^T."""
    return -np.linalg.solve(blocks.gamma3_blk, blocks.gamma2_blk.T)


def _abscissa(sdc: SdcEvaluation, k_gain: np.ndarray) -> float:
    return float(np.linalg.eigvals(sdc.a_mat + sdc.b_mat @ k_gain).real.max())


class Synthesizer:
    """Pointwise gain synthesis at one state."""

    def __init__(self, solver_settings: Optional[SolverSettings] = None):
        """
        Initialize the synthesizer.

        Args:
            solver_settings: Tolerances shared with the Riccati solver
        """
        self.tol = solver_settings or SolverSettings()
        self.solver = RiccatiSolver(self.tol)
        logger.info("Synthesizer initialized", literal_gain_formula=self.tol.literal_gain_formula)

    def _evaluate(self, sdc: SdcEvaluation, weights: CostWeights) -> WeightEvaluation:
        return evaluate_weights(weights, sdc.state, sdc.b_mat.shape[1], sdc.c_mat.shape[0])

    # ===== SDRE =====

    def sdre_gain(self, sdc: SdcEvaluation, weights: CostWeights) -> GainSolution:
        """
        Conventional SDRE gain K = -R^-1 B^T P with P from the pointwise CARE.

        Args:
            sdc: SDC matrices at the current state
            weights: Cost weights (only Q and R are used)

        Returns:
            GainSolution with scheme SDRE
        """
        evaluated = self._evaluate(sdc, weights)
        solution = self.solver.solve_care(CareProblem(
            a_mat=sdc.a_mat, b_mat=sdc.b_mat, q_mat=evaluated.q_mat, r_mat=evaluated.r_mat,
        ))
        k_gain = -np.linalg.solve(evaluated.r_mat, sdc.b_mat.T @ solution.p_mat)
        abscissa = _abscissa(sdc, k_gain)
        return GainSolution(
            k_gain=k_gain,
            p_mat=solution.p_mat,
            scheme=Scheme.SDRE,
            diagnostics=GainDiagnostics(
                riccati_residual=solution.residual_norm,
                spectral_abscissa=abscissa,
                closed_loop_stable=abscissa < 0,
                path="care",
            ),
        )

    # ===== RNQG and its H2-Hinf specialization =====

    def _robust_gain(
        self,
        sdc: SdcEvaluation,
        evaluated: WeightEvaluation,
        noise: NoiseSpec,
        scheme: Scheme,
    ) -> GainSolution:
        # Lambda blocks are P-free, so any P gives the same generalized problem
        blocks = build_gamma_blocks(sdc, evaluated, noise, np.zeros_like(sdc.a_mat), self.tol.gamma3_symmetry_tol)
        big1, big2, big3 = blocks.lambda_big
        problem = GeneralizedCareProblem(acl_mat=sdc.a_mat + big1, lam2_mat=big2, lam3_mat=big3)

        path, iterations = "direct", 0
        try:
            solution = self.solver.solve_generalized_care(problem)
        except IllConditioned as e:
            logger.warning("Direct generalized solve ill-conditioned, refining", error=str(e))
            start = self.solver.solve_care(CareProblem(
                a_mat=sdc.a_mat, b_mat=sdc.b_mat, q_mat=evaluated.q_mat, r_mat=evaluated.r_mat,
            ))
            solution, iterations, converged = self.solver.refine_generalized(problem, start.p_mat)
            path = "newton"
            if not converged:
                raise NoConvergence(f"Newton-Kleinman refinement did not converge in {iterations} iterations")

        blocks = build_gamma_blocks(sdc, evaluated, noise, solution.p_mat, self.tol.gamma3_symmetry_tol)
        residual = gamma_residual(blocks)
        bound = self.tol.residual_tol * (1.0 + np.linalg.norm(solution.p_mat))
        if residual > bound and path == "direct":
            solution, iterations, converged = self.solver.refine_generalized(problem, solution.p_mat)
            path = "newton"
            if not converged:
                raise NoConvergence(f"Newton-Kleinman refinement did not converge in {iterations} iterations")
            blocks = build_gamma_blocks(sdc, evaluated, noise, solution.p_mat, self.tol.gamma3_symmetry_tol)
            residual = gamma_residual(blocks)

        k_gain = optimal_gain(blocks)
        abscissa = _abscissa(sdc, k_gain)
        return GainSolution(
            k_gain=k_gain,
            p_mat=solution.p_mat,
            scheme=scheme,
            diagnostics=GainDiagnostics(
                riccati_residual=solution.residual_norm,
                gamma_residual=residual,
                spectral_abscissa=abscissa,
                closed_loop_stable=abscissa < 0,
                path=path,
                iterations=iterations,
                gamma3_symmetry_defect=blocks.gamma3_symmetry_defect,
            ),
        )

    def rnqg_gain(self, sdc: SdcEvaluation, weights: CostWeights, noise: NoiseSpec) -> GainSolution:
        """
        Robust nonlinear quadratic Gaussian gain.

        Args:
            sdc: SDC matrices at the current state
            weights: Q, R, S, gamma1, gamma2
            noise: Process and measurement noise intensities L, H

        Returns:
            GainSolution with scheme RNQG

        Raises:
            SingularM6, SingularGamma4Core, NoConvergence, RiccatiError
        """
        return self._robust_gain(sdc, self._evaluate(sdc, weights), noise, Scheme.RNQG)

    def h2hinf_gain(self, sdc: SdcEvaluation, weights: CostWeights) -> GainSolution:
        """
        H2-Hinf gain: the RNQG machinery with L = 0 and H = 0.

        With H = 0 the v channel decouples, so gamma2 only needs to keep M6 invertible;
        a zero gamma2 is replaced by 1 with a warning.
        """
        evaluated = self._evaluate(sdc, weights)
        if evaluated.gamma2 == 0.0:
            logger.warning("gamma2 is zero; using 1 for the decoupled noise channel", scheme=Scheme.H2HINF.value)
            evaluated = evaluated.model_copy(update={"gamma2": 1.0})
        solution = self._robust_gain(sdc, evaluated, zero_noise(sdc), Scheme.H2HINF)
        if not self.tol.literal_gain_formula:
            return solution

        k_gain = literal_gain(sdc, evaluated, solution.p_mat)
        abscissa = _abscissa(sdc, k_gain)
        diagnostics = solution.diagnostics.model_copy(update={
            "spectral_abscissa": abscissa,
            "closed_loop_stable": abscissa < 0,
            "path": "literal-formula",
        })
        return solution.model_copy(update={"k_gain": k_gain, "diagnostics": diagnostics})


def literal_gain(sdc: SdcEvaluation, weights: WeightEvaluation, p_mat: np.ndarray) -> np.ndarray:
    """
    Closed-form H2-Hinf gain written directly in the plant matrices, evaluated at a given P.

    K = -[R - D^T S G E1 G^T D + D^T S D]^-1 [P B + C^T S D - (P F + C^T S G) E1 G^T S D]^T
    with E1 = (G^T S G + gamma1^2 I)^-1. Differs from the specialization when S, D and G are nonzero.
    """
    s_mat, g_mat, d_mat = weights.s_mat, sdc.g_dist, sdc.d_mat
    e1 = _inverse(g_mat.T @ s_mat @ g_mat + weights.gamma1 ** 2 * np.eye(g_mat.shape[1]),
                  SingularGamma4Core, "E1")
    lhs = weights.r_mat - d_mat.T @ s_mat @ g_mat @ e1 @ g_mat.T @ d_mat + d_mat.T @ s_mat @ d_mat
    rhs = (p_mat @ sdc.b_mat + sdc.c_mat.T @ s_mat @ d_mat
           - (p_mat @ sdc.f_dist + sdc.c_mat.T @ s_mat @ g_mat) @ e1 @ g_mat.T @ s_mat @ d_mat)
    return -np.linalg.solve(lhs, rhs.T)


def closed_form_check(blocks: GammaBlocks, k_gain: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Both sides of the completing-the-square identity for a trial gain.

    Returns:
        (Gamma1 + Gamma2 K + K^T Gamma2^T + K^T Gamma3 K,
         Gamma1 - Gamma2 Gamma3^-1 Gamma2^T + (K - K0)^T Gamma3 (K - K0))
    """
    g1, g2, g3 = blocks.gamma1_blk, blocks.gamma2_blk, blocks.gamma3_blk
    k0 = optimal_gain(blocks)
    lhs = g1 + g2 @ k_gain + k_gain.T @ g2.T + k_gain.T @ g3 @ k_gain
    rhs = g1 - g2 @ np.linalg.solve(g3, g2.T) + (k_gain - k0).T @ g3 @ (k_gain - k0)
    return lhs, rhs


# Global synthesizer instance
synthesizer = Synthesizer()


def sdre_gain(sdc: SdcEvaluation, weights: CostWeights) -> GainSolution:
    return synthesizer.sdre_gain(sdc, weights)


def h2hinf_gain(sdc: SdcEvaluation, weights: CostWeights) -> GainSolution:
    return synthesizer.h2hinf_gain(sdc, weights)


def rnqg_gain(sdc: SdcEvaluation, weights: CostWeights, noise: NoiseSpec) -> GainSolution:
    return synthesizer.rnqg_gain(sdc, weights, noise)
