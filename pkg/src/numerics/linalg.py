"""
Dense Linear Algebra
Symmetric matrices, LU and Cholesky solves, dominant-eigenvalue extraction and the error function
"""

from dataclasses import dataclass
from typing import Optional, Tuple, Union
import numpy as np
import scipy.linalg
import scipy.special
from src.core.errors import SingularMatrix, NoConvergence, DimensionMismatch, ValidationError
from src.core.structured_logging import get_structured_logger

PIVOT_THRESHOLD = 1e-12
RESIDUAL_TOLERANCE = 1e-10
_TINY = np.finfo(float).tiny

logger = get_structured_logger(__name__)

ArrayLike = Union["SymMatrix", np.ndarray]


@dataclass(frozen=True, eq=False)
class SymMatrix:
    """Symmetric dense matrix; construction averages A with its transpose"""
    entries: np.ndarray

    def __post_init__(self):
        if self.entries.ndim != 2 or self.entries.shape[0] != self.entries.shape[1]:
            raise DimensionMismatch(f"SymMatrix needs a square array, got shape {self.entries.shape}")
        self.entries.setflags(write=False)

    @classmethod
    def from_array(cls, a) -> "SymMatrix":
        a = np.array(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f"SymMatrix needs a square array, got shape {a.shape}")
        return cls(0.5 * (a + a.T))

    @classmethod
    def gram(cls, x: np.ndarray, scale: float = 1.0) -> "SymMatrix":
        """scale * X Xᵀ for a d×m matrix X"""
        x = np.asarray(x, dtype=float)
        return cls.from_array(scale * (x @ x.T))

    @classmethod
    def identity(cls, order: int) -> "SymMatrix":
        return cls(np.eye(order))

    @property
    def order(self) -> int:
        return int(self.entries.shape[0])

    def __add__(self, other: "SymMatrix") -> "SymMatrix":
        return SymMatrix.from_array(self.entries + other.entries)

    def __sub__(self, other: "SymMatrix") -> "SymMatrix":
        return SymMatrix.from_array(self.entries - other.entries)

    def scaled(self, factor: float) -> "SymMatrix":
        return SymMatrix(factor * self.entries)

    def shifted(self, shift: float) -> "SymMatrix":
        """A + shift·I"""
        return SymMatrix(self.entries + shift * np.eye(self.order))


def _as_array(a: ArrayLike) -> np.ndarray:
    if isinstance(a, SymMatrix):
        return a.entries
    return np.asarray(a, dtype=float)


def _checked_square(a: ArrayLike) -> np.ndarray:
    matrix = _as_array(a)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatch(f"Expected a square matrix, got shape {matrix.shape}")
    if matrix.size and not np.all(np.isfinite(matrix)):
        raise ValidationError("Matrix contains non-finite entries")
    return matrix


class Factorization:
    """LU factorization of a nonsingular matrix, reusable across right-hand sides"""

    def __init__(self, a: ArrayLike):
        self.matrix = _checked_square(a)

        scale = float(np.max(np.abs(self.matrix))) if self.matrix.size else 0.0
        if scale == 0.0:
            raise SingularMatrix("Matrix is identically zero", order=int(self.matrix.shape[0]))

        lu, piv = scipy.linalg.lu_factor(self.matrix, check_finite=False)
        pivots = np.abs(np.diag(lu))
        smallest = int(np.argmin(pivots))
        if pivots[smallest] < PIVOT_THRESHOLD * scale:
            raise SingularMatrix(
                "Pivot magnitude below singularity threshold",
                pivot_index=smallest,
                pivot=float(pivots[smallest]),
                threshold=PIVOT_THRESHOLD * scale,
            )
        self._lu = (lu, piv)

    @property
    def order(self) -> int:
        return int(self.matrix.shape[0])

    def _solve_factored(self, b: np.ndarray) -> np.ndarray:
        return scipy.linalg.lu_solve(self._lu, b, check_finite=False)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve A x = b with one step of iterative refinement"""
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.order:
            raise DimensionMismatch(f"Right-hand side has {b.shape[0]} rows, matrix order is {self.order}")

        x = self._solve_factored(b)
        x = x + self._solve_factored(b - self.matrix @ x)

        residual = relative_residual(self.matrix, x, b)
        if residual > RESIDUAL_TOLERANCE:
            logger.warning("solve_residual_above_tolerance", residual=residual,
                           tolerance=RESIDUAL_TOLERANCE, order=self.order)
        return x


class CholeskyFactorization(Factorization):
    """Cholesky factorization of a symmetric positive definite matrix"""

    def __init__(self, a: ArrayLike):
        self.matrix = _checked_square(a)
        self._factor = scipy.linalg.cho_factor(self.matrix, check_finite=False)

    def _solve_factored(self, b: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(self._factor, b, check_finite=False)


def cholesky(a: ArrayLike) -> Optional[CholeskyFactorization]:
    """Cholesky factorization, or None when the matrix is not positive definite"""
    try:
        return CholeskyFactorization(a)
    except np.linalg.LinAlgError:
        return None


def relative_residual(a: ArrayLike, x: np.ndarray, b: np.ndarray) -> float:
    """‖Ax − b‖ / max(‖b‖, tiny)"""
    a = _as_array(a)
    return float(np.linalg.norm(a @ x - b) / max(np.linalg.norm(b), _TINY))


def solve_linear(a: ArrayLike, b: np.ndarray) -> np.ndarray:
    """Solve the linear system A x = b"""
    return Factorization(a).solve(b)


def gershgorin_lower_bound(a: np.ndarray) -> float:
    radii = np.sum(np.abs(a), axis=1) - np.abs(np.diag(a))
    return float(np.min(np.diag(a) - radii))


def largest_eigenvalue(a: ArrayLike, tol: float = 1e-10, max_iter: int = 10_000,
                       shift: Optional[float] = None, seed: int = 0) -> Tuple[float, np.ndarray]:
    """Largest eigenvalue and a unit eigenvector of a symmetric matrix by shifted power iteration.

    The iteration runs on A + s·I with s chosen so that matrix is positive semidefinite
    (a Gershgorin bound unless ``shift`` is given; pass 0 for Gram matrices). The dominant
    eigenvalue of the shifted matrix is then the largest eigenvalue of A.

    Converged when ‖Av − λv‖ ≤ tol·|λ + s|.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive", tol=tol)
    matrix = _as_array(a)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatch(f"Expected a square matrix, got shape {matrix.shape}")
    order = matrix.shape[0]

    s = max(0.0, -gershgorin_lower_bound(matrix)) if shift is None else float(shift)
    shifted = matrix + s * np.eye(order)

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(order)
    v /= np.linalg.norm(v)

    residual = np.inf
    eigenvalue = 0.0
    for iteration in range(1, max_iter + 1):
        w = shifted @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # A + sI annihilates a generic vector only when it is zero
            return -s, v
        v = w / norm
        av = matrix @ v
        eigenvalue = float(v @ av)
        residual = float(np.linalg.norm(av - eigenvalue * v))
        if residual <= tol * abs(eigenvalue + s):
            logger.debug("power_iteration_converged", iterations=iteration,
                         eigenvalue=eigenvalue, residual=residual)
            return eigenvalue, v

    raise NoConvergence(
        "Power iteration did not reach the residual tolerance",
        iterations=max_iter, residual=residual, eigenvalue=eigenvalue, tol=tol
    )


def erf(z):
    """Gauss error function"""
    return scipy.special.erf(z)
