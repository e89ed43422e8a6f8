"""
Continuous algebraic Riccati equation solvers.
Standard CARE via the stable invariant subspace of the Hamiltonian, the
generalized form used by RNQG synthesis, and an independent residual oracle.
"""

from typing import Optional, Tuple, Union

import numpy as np
import scipy.linalg as spla

from src.config import SolverSettings
from src.logger import logger
from src.models import CareProblem, DimensionMismatch, GeneralizedCareProblem, RiccatiSolution


class RiccatiError(Exception):
    """Custom exception for Riccati solver errors."""
    pass


class NonSymmetricInput(RiccatiError):
    """Q, R, Lam2 or Lam3 fails the symmetry tolerance."""
    pass


class IndefiniteInput(RiccatiError):
    """R is not positive definite."""
    pass


class NoStabilizingSolution(RiccatiError):
    """Hamiltonian has imaginary-axis eigenvalues or no usable stable subspace."""
    pass


class IllConditioned(RiccatiError):
    """Residual still above tolerance after refinement."""
    pass


class IndefiniteLam3(RiccatiError):
    """-Lam3 has a significantly negative eigenvalue."""
    pass


# Largest condition number accepted for the upper block of the stable subspace basis
_MAX_BASIS_COND = 1e12


def _symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def _check_square(name: str, mat: np.ndarray, n: int) -> None:
    if mat.ndim != 2 or mat.shape != (n, n):
        raise DimensionMismatch(f"{name} must be {n}x{n}, got {mat.shape}")


class RiccatiSolver:
    """Dense CARE solver with certified residuals."""

    def __init__(self, solver_settings: Optional[SolverSettings] = None):
        """
        Initialize the solver.

        Args:
            solver_settings: Tolerances; defaults to the documented values
        """
        self.tol = solver_settings or SolverSettings()
        logger.info("Riccati solver initialized",
                    residual_tol=self.tol.residual_tol,
                    imag_axis_tol=self.tol.imag_axis_tol)

    # ===== Validation =====

    def _check_symmetric(self, name: str, mat: np.ndarray) -> None:
        defect = np.linalg.norm(mat - mat.T)
        if defect > self.tol.symmetry_tol * np.linalg.norm(mat):
            raise NonSymmetricInput(f"{name} is not symmetric (defect {defect:.3e})")

    def _validate_care(self, prob: CareProblem) -> None:
        a_mat, b_mat = prob.a_mat, prob.b_mat
        if a_mat.ndim != 2 or a_mat.shape[0] != a_mat.shape[1]:
            raise DimensionMismatch(f"A must be square, got {a_mat.shape}")
        n = a_mat.shape[0]
        if b_mat.ndim != 2 or b_mat.shape[0] != n:
            raise DimensionMismatch(f"B must have {n} rows, got {b_mat.shape}")
        _check_square("Q", prob.q_mat, n)
        _check_square("R", prob.r_mat, b_mat.shape[1])

        self._check_symmetric("Q", prob.q_mat)
        self._check_symmetric("R", prob.r_mat)
        if np.linalg.eigvalsh(_symmetrize(prob.r_mat)).min() <= 0:
            raise IndefiniteInput("R must be positive definite")

    # ===== Standard CARE =====

    def solve_care(self, prob: CareProblem) -> RiccatiSolution:
        """
        Solve A^T P + P A - P B R^-1 B^T P + Q = 0 for the stabilizing P.

        Args:
            prob: CARE data

        Returns:
            RiccatiSolution with residual and closed-loop stability flag

        Raises:
            NonSymmetricInput, IndefiniteInput, NoStabilizingSolution, IllConditioned
        """
        self._validate_care(prob)
        a_mat = prob.a_mat
        q_mat = _symmetrize(prob.q_mat)
        g_mat = _symmetrize(prob.b_mat @ np.linalg.solve(_symmetrize(prob.r_mat), prob.b_mat.T))
        return self._solve_hamiltonian(a_mat, g_mat, q_mat)

    def _solve_hamiltonian(self, a_mat: np.ndarray, g_mat: np.ndarray, q_mat: np.ndarray) -> RiccatiSolution:
        """Solve A^T P + P A - P G P + Q = 0 with G symmetric PSD."""
        n = a_mat.shape[0]
        hamiltonian = np.block([[a_mat, -g_mat], [-q_mat, -a_mat.T]])

        eigenvalues = np.linalg.eigvals(hamiltonian)
        axis_tol = self.tol.imag_axis_tol * max(1.0, np.linalg.norm(a_mat))
        closest = np.abs(eigenvalues.real).min()
        if closest < axis_tol:
            raise NoStabilizingSolution(
                f"Hamiltonian eigenvalue within {closest:.3e} of the imaginary axis"
            )

        _, basis, sdim = spla.schur(hamiltonian, output="real", sort="lhp")
        if sdim != n:
            raise NoStabilizingSolution(f"stable subspace has dimension {sdim}, expected {n}")

        u1, u2 = basis[:n, :n], basis[n:, :n]
        if np.linalg.cond(u1) > _MAX_BASIS_COND:
            raise NoStabilizingSolution("stable subspace is not a graph over the state space")
        p_mat = _symmetrize(np.linalg.solve(u1.T, u2.T).T)

        residual = self._residual(a_mat, g_mat, q_mat, p_mat)
        refined = False
        try:
            # One Newton-Kleinman step from the Schur solution
            closed = a_mat - g_mat @ p_mat
            candidate = _symmetrize(spla.solve_continuous_lyapunov(closed.T, -(q_mat + p_mat @ g_mat @ p_mat)))
            candidate_residual = self._residual(a_mat, g_mat, q_mat, candidate)
            if np.isfinite(candidate_residual) and candidate_residual < residual:
                p_mat, residual, refined = candidate, candidate_residual, True
        except (np.linalg.LinAlgError, ValueError):
            pass

        bound = self.tol.residual_tol * (1.0 + np.linalg.norm(p_mat))
        if not np.isfinite(residual) or residual > bound:
            raise IllConditioned(f"residual {residual:.3e} exceeds {bound:.3e}")

        abscissa = float(np.linalg.eigvals(a_mat - g_mat @ p_mat).real.max())
        logger.debug("CARE solved", n=n, residual=residual, abscissa=abscissa, refined=refined)
        return RiccatiSolution(
            p_mat=p_mat,
            residual_norm=float(residual),
            stable=abscissa < 0,
            closed_loop_abscissa=abscissa,
            refined=refined,
        )

    @staticmethod
    def _residual(a_mat: np.ndarray, g_mat: np.ndarray, q_mat: np.ndarray, p_mat: np.ndarray) -> float:
        lhs = a_mat.T @ p_mat + p_mat @ a_mat - p_mat @ g_mat @ p_mat + q_mat
        return float(np.linalg.norm(lhs))

    # ===== Generalized CARE =====

    def _validate_generalized(self, prob: GeneralizedCareProblem) -> None:
        acl = prob.acl_mat
        if acl.ndim != 2 or acl.shape[0] != acl.shape[1]:
            raise DimensionMismatch(f"Acl must be square, got {acl.shape}")
        n = acl.shape[0]
        _check_square("Lam2", prob.lam2_mat, n)
        _check_square("Lam3", prob.lam3_mat, n)
        self._check_symmetric("Lam2", prob.lam2_mat)
        self._check_symmetric("Lam3", prob.lam3_mat)

    def factor_neg_lam3(self, lam3_mat: np.ndarray) -> np.ndarray:
        """
        Symmetric factor B~ with B~ B~^T = -Lam3 (tiny negative eigenvalues clamped).

        Raises:
            IndefiniteLam3: if -Lam3 has an eigenvalue below -lam3_tol * ||Lam3||
        """
        eigenvalues, vectors = np.linalg.eigh(-_symmetrize(lam3_mat))
        floor = -self.tol.lam3_tol * np.linalg.norm(lam3_mat, 2)
        if eigenvalues.min() < floor:
            raise IndefiniteLam3(
                f"-Lam3 has eigenvalue {eigenvalues.min():.3e} below {floor:.3e}"
            )
        return vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))

    def solve_generalized_care(self, prob: GeneralizedCareProblem) -> RiccatiSolution:
        """
        Solve P Acl + Acl^T P + Lam2 + P Lam3 P = 0.

        Maps to the standard form with Q <- Lam2 and B R^-1 B^T <- -Lam3.

        Raises:
            IndefiniteLam3, NonSymmetricInput, NoStabilizingSolution, IllConditioned
        """
        self._validate_generalized(prob)
        factor = self.factor_neg_lam3(prob.lam3_mat)
        inner = self._solve_hamiltonian(prob.acl_mat, _symmetrize(factor @ factor.T), _symmetrize(prob.lam2_mat))

        p_mat = inner.p_mat
        residual = self.care_residual(prob, p_mat)
        bound = self.tol.residual_tol * (1.0 + np.linalg.norm(p_mat))
        if residual > bound:
            raise IllConditioned(f"generalized residual {residual:.3e} exceeds {bound:.3e}")

        abscissa = float(np.linalg.eigvals(prob.acl_mat + prob.lam3_mat @ p_mat).real.max())
        return RiccatiSolution(
            p_mat=p_mat,
            residual_norm=residual,
            stable=abscissa < 0,
            closed_loop_abscissa=abscissa,
            refined=inner.refined,
        )

    def refine_generalized(
        self,
        prob: GeneralizedCareProblem,
        p_start: np.ndarray,
        tol: Optional[float] = None,
        max_iter: Optional[int] = None,
    ) -> Tuple[RiccatiSolution, int, bool]:
        """
        Newton-Kleinman iteration on the generalized equation starting at p_start.

        Args:
            prob: Generalized CARE data
            p_start: Initial (stabilizing) guess
            tol: Relative step tolerance, default fixed_point_tol
            max_iter: Iteration cap, default fixed_point_max_iter

        Returns:
            (solution, iterations used, converged flag)
        """
        self._validate_generalized(prob)
        tol = tol if tol is not None else self.tol.fixed_point_tol
        max_iter = max_iter if max_iter is not None else self.tol.fixed_point_max_iter
        lam2 = _symmetrize(prob.lam2_mat)
        lam3 = _symmetrize(prob.lam3_mat)

        p_mat = _symmetrize(p_start)
        converged = False
        iterations = 0
        for iterations in range(1, max_iter + 1):
            closed = prob.acl_mat + lam3 @ p_mat
            try:
                p_next = _symmetrize(spla.solve_continuous_lyapunov(closed.T, -(lam2 - p_mat @ lam3 @ p_mat)))
            except (np.linalg.LinAlgError, ValueError) as e:
                logger.warning("Newton-Kleinman step failed", iteration=iterations, error=str(e))
                break
            step = np.linalg.norm(p_next - p_mat)
            p_mat = p_next
            if step <= tol * max(np.linalg.norm(p_mat), 1e-300):
                converged = True
                break

        residual = self.care_residual(prob, p_mat)
        abscissa = float(np.linalg.eigvals(prob.acl_mat + lam3 @ p_mat).real.max())
        logger.debug("Newton-Kleinman refinement finished",
                     iterations=iterations, converged=converged, residual=residual)
        solution = RiccatiSolution(
            p_mat=p_mat,
            residual_norm=residual,
            stable=abscissa < 0,
            closed_loop_abscissa=abscissa,
            refined=True,
        )
        return solution, iterations, converged

    # ===== Residual oracle =====

    @staticmethod
    def care_residual(prob: Union[CareProblem, GeneralizedCareProblem], p_mat: np.ndarray) -> float:
        """
        Frobenius norm of the defining equation's left-hand side at p_mat.

        Raises:
            DimensionMismatch
        """
        p_mat = np.asarray(p_mat, dtype=float)
        if isinstance(prob, GeneralizedCareProblem):
            n = prob.acl_mat.shape[0]
            _check_square("P", p_mat, n)
            _check_square("Lam2", prob.lam2_mat, n)
            _check_square("Lam3", prob.lam3_mat, n)
            lhs = p_mat @ prob.acl_mat + prob.acl_mat.T @ p_mat + prob.lam2_mat + p_mat @ prob.lam3_mat @ p_mat.T
            return float(np.linalg.norm(lhs))

        n = prob.a_mat.shape[0]
        _check_square("P", p_mat, n)
        _check_square("Q", prob.q_mat, n)
        if prob.b_mat.shape[0] != n or prob.r_mat.shape != (prob.b_mat.shape[1],) * 2:
            raise DimensionMismatch("B and R are inconsistent with A")
        g_mat = prob.b_mat @ np.linalg.solve(prob.r_mat, prob.b_mat.T)
        lhs = prob.a_mat.T @ p_mat + p_mat @ prob.a_mat - p_mat @ g_mat @ p_mat + prob.q_mat
        return float(np.linalg.norm(lhs))


# Global solver instance
riccati_solver = RiccatiSolver()


def solve_care(prob: CareProblem) -> RiccatiSolution:
    """Solve a standard CARE with the default tolerances."""
    return riccati_solver.solve_care(prob)


def solve_generalized_care(prob: GeneralizedCareProblem) -> RiccatiSolution:
    """Solve a generalized CARE with the default tolerances."""
    return riccati_solver.solve_generalized_care(prob)


def care_residual(prob: Union[CareProblem, GeneralizedCareProblem], p_mat: np.ndarray) -> float:
    """Residual oracle for either equation form."""
    return RiccatiSolver.care_residual(prob, p_mat)
