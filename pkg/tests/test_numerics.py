"""
Test suite for dense linear algebra
"""

import math
import numpy as np
import pytest
from src.core.errors import DimensionMismatch, NoConvergence, SingularMatrix
from src.numerics.linalg import (
    Factorization, SymMatrix, cholesky, erf, largest_eigenvalue, relative_residual, solve_linear
)


def _random_spd(order: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((order, order))
    return a @ a.T + order * np.eye(order)


class TestSymMatrix:
    """Test symmetric matrix value type"""

    def test_from_array_symmetrizes(self):
        m = SymMatrix.from_array([[1.0, 2.0], [0.0, 3.0]])
        assert np.allclose(m.entries, [[1.0, 1.0], [1.0, 3.0]])

    def test_entries_read_only(self):
        m = SymMatrix.identity(3)
        with pytest.raises(ValueError):
            m.entries[0, 0] = 5.0

    def test_gram(self):
        x = np.arange(6, dtype=float).reshape(2, 3)
        assert np.allclose(SymMatrix.gram(x, 0.5).entries, 0.5 * x @ x.T)

    def test_arithmetic(self):
        a = SymMatrix.from_array(_random_spd(3))
        b = SymMatrix.identity(3)
        assert np.allclose((a - b).entries, a.entries - np.eye(3))
        assert np.allclose(a.shifted(2.0).entries, (a + b.scaled(2.0)).entries)

    def test_non_square_rejected(self):
        with pytest.raises(DimensionMismatch):
            SymMatrix.from_array(np.zeros((2, 3)))


class TestFactorization:
    """Test LU solves"""

    def test_solve_matches_numpy(self):
        a = _random_spd(12, seed=1)
        b = np.random.default_rng(2).standard_normal(12)
        x = solve_linear(a, b)
        assert np.allclose(x, np.linalg.solve(a, b))
        assert relative_residual(a, x, b) < 1e-12

    def test_multiple_right_hand_sides(self):
        a = _random_spd(5, seed=3)
        factor = Factorization(SymMatrix.from_array(a))
        rhs = np.eye(5)
        assert np.allclose(a @ factor.solve(rhs), rhs)

    def test_singular_matrix(self):
        """Test exactly rank-deficient matrices are rejected"""
        v = np.array([1.0, 2.0, 3.0])
        with pytest.raises(SingularMatrix):
            Factorization(np.outer(v, v))

    def test_zero_matrix(self):
        with pytest.raises(SingularMatrix):
            Factorization(np.zeros((3, 3)))

    def test_rhs_shape_checked(self):
        with pytest.raises(DimensionMismatch):
            Factorization(np.eye(3)).solve(np.ones(4))


class TestCholesky:
    """Test Cholesky solves and the positive-definiteness check"""

    def test_solve_matches_lu(self):
        a = _random_spd(10, seed=4)
        b = np.random.default_rng(5).standard_normal(10)
        factor = cholesky(SymMatrix.from_array(a))
        assert factor is not None
        assert np.allclose(factor.solve(b), solve_linear(a, b), rtol=1e-12, atol=1e-14)
        assert relative_residual(a, factor.solve(b), b) < 1e-12

    def test_indefinite_returns_none(self):
        assert cholesky(np.diag([2.0, -1.0, 3.0])) is None

    def test_semidefinite_returns_none(self):
        v = np.array([1.0, 2.0, 3.0])
        assert cholesky(np.outer(v, v)) is None


class TestLargestEigenvalue:
    """Test shifted power iteration against a dense eigensolver"""

    def test_psd_gram(self):
        x = np.random.default_rng(4).standard_normal((8, 30))
        g = x @ x.T / 30
        value, vector = largest_eigenvalue(g, shift=0.0)
        assert value == pytest.approx(np.linalg.eigvalsh(g)[-1], rel=1e-8)
        assert np.linalg.norm(g @ vector - value * vector) <= 1e-8 * value

    def test_indefinite_matrix(self):
        """Test the Gershgorin shift recovers the algebraically largest eigenvalue"""
        d = np.diag([-10.0, 1.0, 3.0])
        q, _ = np.linalg.qr(np.random.default_rng(5).standard_normal((3, 3)))
        a = q @ d @ q.T
        value, _ = largest_eigenvalue(a)
        assert value == pytest.approx(3.0, rel=1e-8)

    def test_zero_matrix(self):
        value, _ = largest_eigenvalue(np.zeros((4, 4)), shift=0.0)
        assert value == 0.0

    def test_iteration_cap(self):
        a = np.diag([1.0, 0.999999])
        with pytest.raises(NoConvergence):
            largest_eigenvalue(a, tol=1e-14, max_iter=3, shift=0.0)


class TestErf:
    """Test the error function"""

    def test_known_values(self):
        assert erf(0.0) == 0.0
        assert erf(1.0) == pytest.approx(math.erf(1.0), abs=1e-15)
        assert erf(-2.5) == pytest.approx(-erf(2.5))


if __name__ == "__main__":
    pytest.main([__file__])
