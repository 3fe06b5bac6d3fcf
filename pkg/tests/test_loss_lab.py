"""
Test suite for the loss laboratory
"""

import math
import numpy as np
import pytest
from src.core.errors import DivergenceDetected, MissingTruth, ValidationError
from src.data.dataset import Dataset, center
from src.data.synthetic import GmmSpec, generate_gmm
from src.qlds.loss_lab import (
    AdamOptimizer, LabeledLoss, LossSpec, OptimConfig, UnlabeledLoss, all_specs, loss_and_gradient,
    loss_grid_oracle_compare, train, train_trajectory
)
from src.qlds.solver import HyperParams, default_lambda, fit_qlds

CONVEX_SPEC = LossSpec(LabeledLoss.SQUARE, UnlabeledLoss.QUADRATIC_MARGIN)


def _plus_dataset() -> Dataset:
    """Four labeled points on the axes and two unlabeled ones, d = 2"""
    b = 1.2
    features = np.array([
        [b, -b, 0.0, 0.0, b, 0.0],
        [0.0, 0.0, b, -b, 0.0, b],
    ])
    return Dataset(features, [0, 1, 2, 3], [4, 5], [1, -1, 1, -1], true_unlabeled_labels=[1, 1])


class TestSpecs:
    """Test loss specifications"""

    def test_six_combinations(self):
        names = {spec.name for spec in all_specs()}
        assert len(names) == 6
        assert "square+quadratic_margin" in names

    def test_invalid_constants(self):
        with pytest.raises(ValidationError):
            LossSpec(gamma=0.0)

    def test_optim_config(self):
        with pytest.raises(ValidationError):
            OptimConfig(learning_rate=0.0)
        with pytest.raises(ValidationError):
            OptimConfig(first_moment_decay=1.0)


class TestGradients:
    """Test analytic gradients against central finite differences"""

    @pytest.mark.parametrize("spec", all_specs(), ids=lambda spec: spec.name)
    def test_finite_differences(self, spec):
        rng = np.random.default_rng(17)
        step = 1e-5
        for trial in range(20):
            ds = center(generate_gmm(GmmSpec(d=5, mu_norm=2.0, n_l1=3, n_l2=3, n_u1=7, n_u2=7, seed=trial)))
            hp = HyperParams(float(rng.uniform(0.1, 1)), float(rng.uniform(0.1, 1)), float(rng.uniform(0.5, 2)))
            omega = rng.standard_normal(ds.d) * 0.5
            _, analytic = loss_and_gradient(spec, hp, ds, omega)
            numeric = np.array([
                (loss_and_gradient(spec, hp, ds, omega + step * e)[0]
                 - loss_and_gradient(spec, hp, ds, omega - step * e)[0]) / (2 * step)
                for e in np.eye(ds.d)
            ])
            relative = np.linalg.norm(numeric - analytic) / max(np.linalg.norm(analytic), 1.0)
            assert relative < 1e-5

    def test_square_quadratic_matches_solver_objective(self):
        """Test the convex spec's stationary point is α_ℓ times the closed-form weights"""
        ds = _plus_dataset()
        hp = HyperParams(0.7, 1.0, 0.3)
        omega = hp.alpha_l * fit_qlds(ds, hp).omega
        _, gradient = loss_and_gradient(CONVEX_SPEC, hp, ds, omega)
        assert np.linalg.norm(gradient) < 1e-12


class TestAdam:
    """Test the adaptive-moment optimizer"""

    def test_first_step_size(self):
        """Test the bias-corrected first step moves each coordinate by the learning rate"""
        optimizer = AdamOptimizer(OptimConfig(learning_rate=0.01, weight_decay=0.0))
        params = np.zeros(3)
        optimizer.step(params, np.array([2.0, -0.5, 1e-3]))
        assert np.allclose(params, [-0.01, 0.01, -0.01], rtol=1e-4)

    def test_weight_decay_enters_gradient(self):
        optimizer = AdamOptimizer(OptimConfig(learning_rate=0.01, weight_decay=1.0))
        params = np.array([1.0])
        optimizer.step(params, np.array([0.0]))
        assert params[0] < 1.0

    def test_reaches_closed_form(self):
        """Test long full-batch training of the convex spec lands on the closed-form weights"""
        ds = _plus_dataset()
        hp = HyperParams(1.0, 1.0, 0.3)
        target = hp.alpha_l * fit_qlds(ds, hp).omega
        model = train(CONVEX_SPEC, hp, ds, OptimConfig(weight_decay=0.0, epochs=20000))
        assert np.linalg.norm(model.omega - target) / np.linalg.norm(target) < 1e-3

    def test_loss_non_increasing(self):
        """Test the convex spec's loss decreases at nearly every step under default settings"""
        b = math.sqrt(2.7)
        ds = Dataset(np.array([[b, -b, b, -b, 0.0, 0.0]]), [0, 1], [2, 3, 4, 5], [1, -1],
                     true_unlabeled_labels=[1, -1, 1, -1])
        _, losses = train_trajectory(CONVEX_SPEC, HyperParams(1.0, 1.0, 0.1), ds)
        steps = np.diff(losses)
        assert len(losses) == OptimConfig().epochs + 1
        assert np.mean(steps <= 0) >= 0.95

    def test_divergence_detected(self):
        ds = _plus_dataset()
        with pytest.raises(DivergenceDetected):
            train(CONVEX_SPEC, HyperParams(1.0, 1.0, 0.3), ds, OptimConfig(learning_rate=1e300, epochs=5))

    def test_zero_epochs(self):
        model, losses = train_trajectory(CONVEX_SPEC, HyperParams(1.0, 0.0, 1.0), _plus_dataset(),
                                         OptimConfig(epochs=0))
        assert np.all(model.omega == 0.0)
        assert len(losses) == 1


class TestOracleCompare:
    """Test per-loss oracle grid search"""

    def test_rows(self):
        ds = center(generate_gmm(GmmSpec(d=10, mu_norm=3.0, n_l1=5, n_l2=5, n_u1=40, n_u2=40, seed=2)))
        lam = default_lambda(ds)
        rows = loss_grid_oracle_compare(ds, all_specs(), [(1.0, 0.0, lam), (1.0, 0.5, lam)],
                                        OptimConfig(epochs=300))
        assert [row.spec for row in rows] == [spec.name for spec in all_specs()]
        for row in rows:
            assert 0.0 <= row.oracle_error <= 1.0
            assert set(row.to_dict()) == {"spec", "alpha_l", "alpha_u", "lambda", "oracle_error"}

    def test_needs_truth(self):
        ds = Dataset(np.eye(3), [0, 1], [2], [1, -1])
        with pytest.raises(MissingTruth):
            loss_grid_oracle_compare(ds, all_specs(), [(1.0, 0.0, 1.0)])

    def test_empty_grid(self):
        with pytest.raises(ValidationError):
            loss_grid_oracle_compare(_plus_dataset(), all_specs(), [])

    @pytest.mark.slow
    def test_square_quadratic_competitive(self):
        """Test the square loss with quadratic margin ranks among the two best specs"""
        ds = center(generate_gmm(GmmSpec(d=50, mu_norm=2.5, n_l1=10, n_l2=10, n_u1=200, n_u2=200, seed=6)))
        lam = default_lambda(ds)
        grid = [(1.0, a_u, lam) for a_u in (0.0, 0.25, 0.5, 0.75, 1.0)]
        rows = loss_grid_oracle_compare(ds, all_specs(), grid, n_jobs=4)
        ranked = sorted(rows, key=lambda row: row.oracle_error)
        assert CONVEX_SPEC.name in [row.spec for row in ranked[:2]]


if __name__ == "__main__":
    pytest.main([__file__])
