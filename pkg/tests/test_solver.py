"""
Test suite for the closed-form QLDS solver
"""

import json
import numpy as np
import pytest
import scipy.linalg
from src.core.errors import DimensionMismatch, InsufficientSamples, NonConvex, ValidationError
from src.data.dataset import Dataset, center
from src.data.synthetic import GmmSpec, generate_gmm
from src.qlds.solver import (
    HyperParams, LambdaSource, LinearModel, convexity_margin, decision_scores, default_lambda, fit_counter,
    fit_qlds, labels_from_scores, loss_gradient, loss_value, predict, transductive_error
)


@pytest.fixture
def mixture() -> Dataset:
    spec = GmmSpec(d=20, mu_norm=2.0, n_l1=15, n_l2=15, n_u1=60, n_u2=60, seed=3)
    return center(generate_gmm(spec))


def _normal_equations(ds: Dataset, hp: HyperParams) -> np.ndarray:
    g_l = ds.x_labeled @ ds.x_labeled.T / ds.n
    g_u = ds.x_unlabeled @ ds.x_unlabeled.T / ds.n
    matrix = hp.lam * np.eye(ds.d) + hp.alpha_l * g_l - hp.alpha_u * g_u
    return np.linalg.solve(matrix, ds.x_labeled @ ds.labels / np.sqrt(ds.n))


class TestHyperParams:
    """Test hyperparameter validation"""

    def test_invalid(self):
        with pytest.raises(ValidationError):
            HyperParams(-0.1, 1.0, 1.0)
        with pytest.raises(ValidationError):
            HyperParams(1.0, 1.0, 0.0)

    def test_scaled(self):
        hp = HyperParams(1.0, 0.5, 2.0).scaled(3.0)
        assert (hp.alpha_l, hp.alpha_u, hp.lam) == (3.0, 1.5, 6.0)


class TestDefaultLambda:
    """Test the λ policy"""

    def test_whole(self, mixture):
        top = np.linalg.eigvalsh(mixture.features @ mixture.features.T / mixture.n)[-1]
        assert default_lambda(mixture) == pytest.approx(1.001 * top, rel=1e-8)

    def test_unlabeled(self, mixture):
        g_u = mixture.x_unlabeled @ mixture.x_unlabeled.T / mixture.n
        lam = default_lambda(mixture, LambdaSource.UNLABELED, inflation=0.01)
        assert lam == pytest.approx(1.01 * np.linalg.eigvalsh(g_u)[-1], rel=1e-8)

    def test_unlabeled_source_needs_unlabeled(self):
        ds = generate_gmm(GmmSpec(d=3, mu_norm=1.0, n_l1=3, n_l2=3, n_u1=0, n_u2=0))
        with pytest.raises(InsufficientSamples):
            default_lambda(ds, LambdaSource.UNLABELED)

    def test_default_lambda_is_convex_for_unit_alphas(self, mixture):
        """Test the policy guarantees convexity for α_u ≤ 1"""
        hp = HyperParams(0.0, 1.0, default_lambda(mixture))
        assert convexity_margin(mixture, hp) > 0
        fit_qlds(mixture, hp)


class TestFit:
    """Test closed-form fitting"""

    def test_matches_normal_equations(self, mixture):
        hp = HyperParams(0.7, 0.4, default_lambda(mixture))
        model = fit_qlds(mixture, hp)
        assert np.allclose(model.omega, _normal_equations(mixture, hp), rtol=1e-9, atol=1e-12)
        assert model.n_train == mixture.n

    def test_ls_svm_is_ridge(self, mixture):
        """Test α_u = 0 reduces to ridge regression on the labeled samples"""
        lam = default_lambda(mixture)
        model = fit_qlds(mixture, HyperParams(1.0, 0.0, lam))
        x = mixture.x_labeled / np.sqrt(mixture.n)
        ridge = np.linalg.solve(lam * np.eye(mixture.d) + x @ x.T, x @ mixture.labels)
        assert np.allclose(model.omega, ridge)

    def test_gb_ssl_special_case(self, mixture):
        """Test α = (0, 1) gives the graph-based unlabeled scores (λI − X_uᵀX_u/n)⁻¹X_uᵀX_ℓy/n"""
        lam = default_lambda(mixture)
        model = fit_qlds(mixture, HyperParams(0.0, 1.0, lam))
        x_u, n = mixture.x_unlabeled, mixture.n
        kernel = lam * np.eye(mixture.n_unlabeled) - x_u.T @ x_u / n
        expected = np.linalg.solve(kernel, x_u.T @ mixture.x_labeled @ mixture.labels / n)
        assert np.allclose(decision_scores(model, x_u), expected, rtol=1e-10, atol=1e-10)

    def test_spectral_clustering_limit(self):
        """Test λ just above the top unlabeled eigenvalue aligns ω with its eigenvector"""
        ds = center(generate_gmm(GmmSpec(d=20, mu_norm=3.0, n_l1=10, n_l2=10, n_u1=150, n_u2=150, seed=8)))
        g_u = ds.x_unlabeled @ ds.x_unlabeled.T / ds.n
        eigenvalues, eigenvectors = np.linalg.eigh(g_u)
        model = fit_qlds(ds, HyperParams(0.0, 1.0, (1 + 1e-6) * eigenvalues[-1]))
        cosine = abs(model.omega @ eigenvectors[:, -1]) / np.linalg.norm(model.omega)
        assert cosine >= 0.999

    def test_scale_invariant_predictions(self, mixture):
        hp = HyperParams(0.8, 0.4, default_lambda(mixture))
        base = fit_qlds(mixture, hp)
        for factor in (0.1, 7.0):
            scaled = fit_qlds(mixture, hp.scaled(factor))
            assert np.allclose(scaled.omega * factor, base.omega, rtol=1e-9)
            assert np.array_equal(predict(scaled, mixture.features), predict(base, mixture.features))

    def test_single_factorization(self, mixture, monkeypatch):
        """Test the convexity check's Cholesky factor is reused for the solve"""
        def no_lu(*args, **kwargs):
            raise AssertionError("LU factorization should not run")

        monkeypatch.setattr(scipy.linalg, "lu_factor", no_lu)
        hp = HyperParams(1.0, 0.5, default_lambda(mixture))
        model = fit_qlds(mixture, hp)
        assert np.allclose(model.omega, _normal_equations(mixture, hp), rtol=1e-9, atol=1e-12)

    def test_non_convex(self, mixture):
        """Test a λ below the convexity threshold is rejected with a negative margin"""
        hp = HyperParams(0.0, 1.0, 0.05)
        with pytest.raises(NonConvex) as info:
            fit_qlds(mixture, hp)
        assert info.value.context["margin"] < 0

    def test_no_labeled_samples(self):
        ds = Dataset(np.eye(2), [], [0, 1], [], true_unlabeled_labels=[1, -1])
        with pytest.raises(InsufficientSamples):
            fit_qlds(ds, HyperParams(1.0, 0.0, 1.0))

    def test_fit_counter(self, mixture):
        before = fit_counter.value
        fit_qlds(mixture, HyperParams(1.0, 0.0, 1.0))
        assert fit_counter.value == before + 1

    def test_deterministic(self, mixture):
        hp = HyperParams(1.0, 1.0, default_lambda(mixture))
        assert np.array_equal(fit_qlds(mixture, hp).omega, fit_qlds(mixture, hp).omega)


class TestScores:
    """Test decision scores and labels"""

    def test_scores(self, mixture):
        model = fit_qlds(mixture, HyperParams(1.0, 0.5, default_lambda(mixture)))
        scores = decision_scores(model, mixture.features)
        assert np.allclose(scores, model.omega @ mixture.features / np.sqrt(mixture.n))

    def test_zero_score_is_positive(self):
        assert labels_from_scores(np.array([-1e-9, 0.0, 2.0])).tolist() == [-1, 1, 1]

    def test_dimension_mismatch(self, mixture):
        model = fit_qlds(mixture, HyperParams(1.0, 0.0, 1.0))
        with pytest.raises(DimensionMismatch):
            decision_scores(model, np.zeros((mixture.d + 1, 3)))

    def test_transductive_error(self, mixture):
        """Test separated mixtures are mostly classified correctly"""
        model = fit_qlds(mixture, HyperParams(1.0, 0.0, default_lambda(mixture)))
        error = transductive_error(model, mixture)
        assert error == pytest.approx(np.mean(predict(model, mixture.x_unlabeled) != mixture.true_unlabeled_labels))
        assert error < 0.4

    def test_transductive_error_needs_unlabeled(self):
        ds = generate_gmm(GmmSpec(d=2, mu_norm=2.0, n_l1=3, n_l2=3, n_u1=0, n_u2=0))
        model = fit_qlds(ds, HyperParams(1.0, 0.0, 1.0))
        with pytest.raises(InsufficientSamples):
            transductive_error(model, ds)


class TestLoss:
    """Test the training objective against the closed form"""

    def test_gradient_vanishes_at_scaled_solution(self, mixture):
        hp = HyperParams(0.6, 0.8, default_lambda(mixture))
        omega = hp.alpha_l * fit_qlds(mixture, hp).omega
        assert np.linalg.norm(loss_gradient(mixture, hp, omega)) < 1e-9

    def test_gradient_finite_differences(self, mixture):
        hp = HyperParams(1.0, 0.5, default_lambda(mixture))
        omega = np.random.default_rng(0).standard_normal(mixture.d)
        step = 1e-6
        numeric = np.array([
            (loss_value(mixture, hp, omega + step * e) - loss_value(mixture, hp, omega - step * e)) / (2 * step)
            for e in np.eye(mixture.d)
        ])
        assert np.allclose(numeric, loss_gradient(mixture, hp, omega), rtol=1e-5, atol=1e-6)


class TestModelDocument:
    """Test model serialization"""

    def test_round_trip(self, mixture):
        model = fit_qlds(mixture, HyperParams(1.0, 0.2, 0.9))
        model = LinearModel(model.omega, model.n_train, model.hyper, feature_mean=np.arange(mixture.d, dtype=float))
        restored = LinearModel.from_dict(json.loads(json.dumps(model.to_dict())))
        assert np.array_equal(restored.omega, model.omega)
        assert restored.hyper.lam == 0.9
        assert np.array_equal(restored.feature_mean, model.feature_mean)

    def test_missing_key(self):
        with pytest.raises(ValidationError):
            LinearModel.from_dict({"omega": [1.0], "n_train": 3})


if __name__ == "__main__":
    pytest.main([__file__])
