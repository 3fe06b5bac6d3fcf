"""
Test suite for the self-training baseline
"""

import numpy as np
import pytest
from src.core.errors import InsufficientSamples, ValidationError
from src.data.dataset import center
from src.data.synthetic import GmmSpec, generate_gmm
from src.qlds.self_training import SelfTrainConfig, ThresholdMode, self_train
from src.qlds.solver import HyperParams, default_lambda, fit_qlds, transductive_error


@pytest.fixture
def mixture():
    spec = GmmSpec(d=20, mu_norm=3.0, n_l1=8, n_l2=8, n_u1=60, n_u2=60, seed=9)
    return center(generate_gmm(spec))


class TestSelfTrainConfig:
    """Test configuration validation"""

    def test_defaults(self):
        cfg = SelfTrainConfig()
        assert cfg.threshold_mode is ThresholdMode.QUANTILE
        assert cfg.max_rounds == 10

    def test_invalid(self):
        with pytest.raises(ValidationError):
            SelfTrainConfig(threshold_grid=())
        with pytest.raises(ValidationError):
            SelfTrainConfig(threshold_grid=(1.5,))
        with pytest.raises(ValidationError):
            SelfTrainConfig(inner_cv_folds=1)


class TestSelfTrain:
    """Test pseudo-labeling rounds"""

    def test_history_accounting(self, mixture):
        """Test every round moves exactly the added samples into the labeled pool"""
        model, history = self_train(mixture, SelfTrainConfig(max_rounds=3, seed=1))
        assert 1 <= len(history) <= 3
        for record in history:
            assert record.pool_size + record.remaining_unlabeled == mixture.n
        for before, after in zip(history, history[1:]):
            assert after.pool_size == before.pool_size + before.added
        assert history[0].pool_size == mixture.n_labeled
        assert model.n_train == mixture.n
        assert (model.hyper.alpha_l, model.hyper.alpha_u) == (1.0, 0.0)

    def test_quantile_adds_samples(self, mixture):
        _, history = self_train(mixture, SelfTrainConfig(threshold_grid=(0.9,), max_rounds=1))
        assert history[0].added >= 1
        assert history[0].threshold == 0.9

    def test_nothing_added_is_ls_svm(self, mixture):
        """Test an unreachable absolute cut leaves the least-squares SVM unchanged"""
        cfg = SelfTrainConfig(threshold_grid=(1e9,), threshold_mode=ThresholdMode.ABSOLUTE)
        model, history = self_train(mixture, cfg)
        assert len(history) == 1 and history[0].added == 0
        baseline = fit_qlds(mixture, HyperParams(1.0, 0.0, default_lambda(mixture)))
        assert np.array_equal(model.omega, baseline.omega)

    def test_deterministic(self, mixture):
        cfg = SelfTrainConfig(max_rounds=2, seed=4)
        first, _ = self_train(mixture, cfg)
        second, _ = self_train(mixture, cfg)
        assert np.array_equal(first.omega, second.omega)

    def test_reasonable_error(self, mixture):
        model, _ = self_train(mixture, SelfTrainConfig(max_rounds=2))
        assert transductive_error(model, mixture) < 0.4

    def test_needs_two_per_class(self):
        ds = center(generate_gmm(GmmSpec(d=4, mu_norm=2.0, n_l1=1, n_l2=5, n_u1=10, n_u2=10)))
        with pytest.raises(InsufficientSamples):
            self_train(ds)


if __name__ == "__main__":
    pytest.main([__file__])
