"""
Test suite for hyperparameter selection
"""

import math
import numpy as np
import pytest
from src.core.errors import (
    AllPointsInvalid, ConfigError, InsufficientSamples, MissingTruth, ParseError, ValidationError
)
from src.data.dataset import Dataset, center
from src.data.synthetic import GmmSpec, generate_gmm
from src.qlds.selection import (
    Grid, GridPointResult, SelectionMethod, _argmin, fit_with_selection, select_cross_validation,
    select_oracle, select_theoretical
)
from src.qlds.solver import HyperParams, default_lambda, fit_counter, fit_qlds, transductive_error
from src.qlds.theory import predict_error


@pytest.fixture
def mixture() -> Dataset:
    spec = GmmSpec(d=40, mu_norm=2.5, n_l1=10, n_l2=10, n_u1=150, n_u2=150, seed=5)
    return center(generate_gmm(spec))


@pytest.fixture
def small_grid() -> Grid:
    return Grid.of([(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.5, 0.5), (1.0, 0.5)])


class TestGrid:
    """Test grid construction and parsing"""

    def test_default(self):
        grid = Grid.default()
        assert len(grid) == 121
        assert grid.points[0] == (0.0, 0.0)
        assert grid.points[-1] == (1.0, 1.0)
        assert (0.3, 0.7) in grid.points

    def test_from_file(self, tmp_path):
        path = tmp_path / "grid.txt"
        path.write_text("# lattice\n1,0\n\n0.5, 0.5  # middle\n", encoding="utf-8")
        assert Grid.from_file(path).points == ((1.0, 0.0), (0.5, 0.5))

    def test_from_file_bad_line(self, tmp_path):
        path = tmp_path / "grid.txt"
        path.write_text("1,0\n1;2\n", encoding="utf-8")
        with pytest.raises(ParseError) as info:
            Grid.from_file(path)
        assert info.value.row == 2

    def test_negative_rejected(self):
        with pytest.raises(ValidationError):
            Grid.of([(-1.0, 0.0)])

    def test_method_aliases(self):
        assert SelectionMethod.parse("th") is SelectionMethod.THEORETICAL
        assert SelectionMethod.parse("cv") is SelectionMethod.CROSS_VALIDATION
        assert SelectionMethod.parse("or") is SelectionMethod.ORACLE
        with pytest.raises(ConfigError):
            SelectionMethod.parse("magic")


class TestArgmin:
    """Test choice rules"""

    def test_first_minimum_wins(self):
        results = [GridPointResult(0.0, 0.0, math.inf, skip_reason="NonConvex"),
                   GridPointResult(1.0, 0.0, 0.2), GridPointResult(0.0, 1.0, 0.2)]
        assert _argmin(results, SelectionMethod.THEORETICAL) == (1.0, 0.0)

    def test_all_skipped(self):
        results = [GridPointResult(0.0, 1.0, math.inf, skip_reason="NonConvex")]
        with pytest.raises(AllPointsInvalid):
            _argmin(results, SelectionMethod.ORACLE)


class TestTheoretical:
    """Test theory-driven selection"""

    def test_criterion_is_predicted_error(self, mixture, small_grid):
        result = select_theoretical(mixture, small_grid)
        for point in result.per_point:
            if point.skip_reason:
                continue
            hp = HyperParams(point.alpha_l, point.alpha_u, result.lam)
            assert point.criterion == pytest.approx(predict_error(mixture, hp).eps_star, abs=1e-12)
        best = min(p.criterion for p in result.per_point if math.isfinite(p.criterion))
        assert result.chosen_criterion == best

    def test_no_fits(self, mixture, small_grid):
        """Test the theoretical search never solves the QLDS system"""
        before = fit_counter.value
        select_theoretical(mixture, small_grid)
        assert fit_counter.value == before

    def test_two_point_grid(self):
        """Test the choice between the supervised and unsupervised ends follows the theory"""
        spec = GmmSpec(d=100, mu_norm=3.0, n_l1=10, n_l2=10, n_u1=1000, n_u2=1000, seed=2)
        ds = center(generate_gmm(spec))
        result = select_theoretical(ds, Grid.of([(1.0, 0.0), (0.0, 1.0)]))
        lam = default_lambda(ds)
        errors = [predict_error(ds, HyperParams(a_l, a_u, lam)).eps_star for a_l, a_u in ((1, 0), (0, 1))]
        assert result.chosen == ((1.0, 0.0), (0.0, 1.0))[int(np.argmin(errors))]

    def test_non_convex_points_skipped(self, mixture):
        grid = Grid.of([(0.0, 1.0), (1.0, 0.0)])
        result = select_theoretical(mixture, grid, lam=0.05)
        assert result.per_point[0].skip_reason == "NonConvex"
        assert result.chosen == (1.0, 0.0)

    def test_all_points_invalid(self, mixture):
        with pytest.raises(AllPointsInvalid):
            select_theoretical(mixture, Grid.of([(0.0, 1.0)]), lam=0.05)

    def test_parallel_matches_serial(self, mixture, small_grid):
        serial = select_theoretical(mixture, small_grid, n_jobs=1)
        parallel = select_theoretical(mixture, small_grid, n_jobs=4)
        assert [p.criterion for p in serial.per_point] == [p.criterion for p in parallel.per_point]

    def test_document(self, mixture, small_grid):
        document = select_theoretical(mixture, small_grid).to_dict()
        assert document["method"] == "theoretical"
        assert len(document["per_point"]) == len(small_grid)
        assert "gram" in document["metadata"]


class TestCrossValidation:
    """Test K-fold selection"""

    def test_deterministic(self, mixture, small_grid):
        first = select_cross_validation(mixture, small_grid, folds=5, seed=3)
        second = select_cross_validation(mixture, small_grid, folds=5, seed=3)
        assert [p.criterion for p in first.per_point] == [p.criterion for p in second.per_point]
        assert all(0.0 <= p.criterion <= 1.0 for p in first.per_point)

    def test_folds_reduced(self, small_grid):
        ds = center(generate_gmm(GmmSpec(d=5, mu_norm=3.0, n_l1=3, n_l2=4, n_u1=20, n_u2=20, seed=1)))
        result = select_cross_validation(ds, small_grid, folds=10)
        assert result.metadata["folds"] == 3
        assert result.metadata["folds_reduced"]

    def test_too_few_labels(self, small_grid):
        ds = center(generate_gmm(GmmSpec(d=5, mu_norm=3.0, n_l1=1, n_l2=4, n_u1=20, n_u2=20)))
        with pytest.raises(InsufficientSamples):
            select_cross_validation(ds, small_grid)


class TestOracle:
    """Test ground-truth selection"""

    def test_needs_truth(self, small_grid):
        ds = Dataset(np.eye(3), [0, 1], [2], [1, -1])
        with pytest.raises(MissingTruth):
            select_oracle(ds, small_grid)

    def test_dominates_baselines(self, mixture, small_grid):
        """Test the oracle error is at most the LS-SVM and GB-SSL errors"""
        result = select_oracle(mixture, small_grid)
        lam = result.lam
        baselines = [transductive_error(fit_qlds(mixture, HyperParams(a_l, a_u, lam)), mixture)
                     for a_l, a_u in ((1.0, 0.0), (0.0, 1.0))]
        assert result.chosen_criterion <= min(baselines)

    def test_dominates_theoretical(self, mixture, small_grid):
        oracle = select_oracle(mixture, small_grid)
        theory = select_theoretical(mixture, small_grid)
        theory_error = oracle.per_point[[p.pair for p in oracle.per_point].index(theory.chosen)].criterion
        assert oracle.chosen_criterion <= theory_error


class TestFitWithSelection:
    """Test select-then-refit"""

    def test_oracle_error_is_criterion(self, mixture, small_grid):
        model, result = fit_with_selection(mixture, "or", small_grid)
        assert transductive_error(model, mixture) == result.chosen_criterion

    def test_refit_at_chosen_point(self, mixture, small_grid):
        model, result = fit_with_selection(mixture, SelectionMethod.THEORETICAL, small_grid)
        assert (model.hyper.alpha_l, model.hyper.alpha_u) == result.chosen
        assert model.hyper.lam == result.lam

    def test_fixed_pair(self, mixture):
        model, result = fit_with_selection(mixture, SelectionMethod.FIXED, alpha_pair=(1.0, 0.0))
        assert result.chosen == (1.0, 0.0)
        assert len(result.per_point) == 1
        assert result.to_dict()["chosen_criterion"] is None
        assert model.hyper.lam == pytest.approx(default_lambda(mixture))

    def test_fixed_needs_pair(self, mixture):
        with pytest.raises(ConfigError):
            fit_with_selection(mixture, SelectionMethod.FIXED)


if __name__ == "__main__":
    pytest.main([__file__])
