"""
Model Selection
Theory-driven, cross-validated and oracle grid search over (α_ℓ, α_u)
"""

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union
import numpy as np
from sklearn.model_selection import StratifiedKFold
from src.core.errors import (
    AllPointsInvalid, ConfigError, InsufficientSamples, InvalidRegime, DegenerateTheory,
    NoConvergence, NonConvex, ParseError, SingularMatrix, ValidationError, read_text
)
from src.core.structured_logging import get_structured_logger, emit_metric
from src.core.workers import run_parallel
from src.data.dataset import Dataset, class_counts
from src.numerics.linalg import SymMatrix, largest_eigenvalue
from src.qlds.solver import (
    HyperParams, LambdaSource, LinearModel, convexity_margin, default_lambda, fit_qlds,
    predict, transductive_error
)
from src.qlds.theory import ProportionMode, TheoryVariant, cached_gram, predict_error

# Failures that skip a grid point instead of aborting the search
SKIPPABLE = (NonConvex, InvalidRegime, DegenerateTheory, NoConvergence, SingularMatrix)

logger = get_structured_logger(__name__)

Pair = Tuple[float, float]


class SelectionMethod(str, Enum):
    THEORETICAL = "theoretical"
    CROSS_VALIDATION = "cross_validation"
    ORACLE = "oracle"
    FIXED = "fixed"

    @classmethod
    def parse(cls, value: Union[str, "SelectionMethod"]) -> "SelectionMethod":
        aliases = {"th": cls.THEORETICAL, "cv": cls.CROSS_VALIDATION, "or": cls.ORACLE}
        if isinstance(value, cls):
            return value
        try:
            return aliases.get(value) or cls(value)
        except ValueError as e:
            raise ConfigError(f"Unknown selection method: {value}", key="select", value=str(value)) from e


@dataclass(frozen=True)
class Grid:
    """Ordered (α_ℓ, α_u) candidates; order breaks ties"""
    points: Tuple[Pair, ...]

    def __post_init__(self):
        if not self.points:
            raise ValidationError("grid must contain at least one point")
        for alpha_l, alpha_u in self.points:
            if alpha_l < 0 or alpha_u < 0 or not (math.isfinite(alpha_l) and math.isfinite(alpha_u)):
                raise ValidationError("grid entries must be finite and nonnegative",
                                      alpha_l=alpha_l, alpha_u=alpha_u)

    @classmethod
    def default(cls, steps: int = 11) -> "Grid":
        values = [round(i / (steps - 1), 10) for i in range(steps)]
        return cls(tuple((alpha_l, alpha_u) for alpha_l in values for alpha_u in values))

    @classmethod
    def of(cls, pairs: Sequence[Sequence[float]]) -> "Grid":
        return cls(tuple((float(a), float(b)) for a, b in pairs))

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "Grid":
        """One `alpha_l,alpha_u` pair per line; blank lines and # comments are ignored"""
        pairs: List[Pair] = []
        for row, line in enumerate(read_text(path).splitlines(), start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = [part.strip() for part in text.split(",")]
            try:
                if len(parts) != 2:
                    raise ValueError(text)
                pairs.append((float(parts[0]), float(parts[1])))
            except ValueError as e:
                raise ParseError(f"Expected 'alpha_l,alpha_u' at line {row} of {path}",
                                 row=row, path=str(path)) from e
        if not pairs:
            raise ParseError(f"Grid file {path} contains no points", path=str(path))
        return cls(tuple(pairs))

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class GridPointResult:
    alpha_l: float
    alpha_u: float
    criterion: float
    skip_reason: Optional[str] = None
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def pair(self) -> Pair:
        return (self.alpha_l, self.alpha_u)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alpha_l": self.alpha_l,
            "alpha_u": self.alpha_u,
            "criterion": self.criterion if math.isfinite(self.criterion) else None,
            "skip_reason": self.skip_reason,
            **self.details,
        }


@dataclass(frozen=True)
class SelectionResult:
    chosen: Pair
    per_point: Tuple[GridPointResult, ...]
    method: str
    wall_clock_seconds: float
    lam: float
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def chosen_index(self) -> int:
        return [point.pair for point in self.per_point].index(self.chosen)

    @property
    def chosen_criterion(self) -> float:
        return self.per_point[self.chosen_index].criterion

    def to_dict(self) -> Dict[str, Any]:
        criterion = self.chosen_criterion
        return {
            "method": self.method,
            "chosen": {"alpha_l": self.chosen[0], "alpha_u": self.chosen[1]},
            "chosen_criterion": criterion if math.isfinite(criterion) else None,
            "lambda": self.lam,
            "wall_clock_seconds": round(self.wall_clock_seconds, 6),
            "metadata": dict(self.metadata),
            "per_point": [point.to_dict() for point in self.per_point],
        }


def _argmin(results: Sequence[GridPointResult], method: SelectionMethod) -> Pair:
    criteria = np.array([point.criterion for point in results], dtype=float)
    if not np.any(np.isfinite(criteria)):
        raise AllPointsInvalid(
            "Every grid point was skipped",
            method=method.value,
            reasons=sorted({point.skip_reason for point in results if point.skip_reason}),
        )
    return results[int(np.argmin(np.where(np.isfinite(criteria), criteria, np.inf)))].pair


def _finish(results: List[GridPointResult], method: SelectionMethod, started: float,
            lam: float, metadata: Dict[str, Any]) -> SelectionResult:
    chosen = _argmin(results, method)
    elapsed = time.perf_counter() - started
    skipped = sum(1 for point in results if point.skip_reason)
    logger.info("selection_completed", method=method.value, chosen=list(chosen), grid_size=len(results),
                skipped=skipped, wall_clock_seconds=elapsed)
    emit_metric("selection_seconds", elapsed, {"method": method.value})
    return SelectionResult(chosen=chosen, per_point=tuple(results), method=method.value,
                           wall_clock_seconds=elapsed, lam=lam, metadata=metadata)


def _skipped(pair: Pair, error: Exception) -> GridPointResult:
    return GridPointResult(pair[0], pair[1], math.inf, skip_reason=type(error).__name__)


def resolve_lambda(ds: Dataset, lambda_source: LambdaSource = LambdaSource.WHOLE,
                   inflation: float = 1e-3, lam: Optional[float] = None) -> float:
    return float(lam) if lam is not None else default_lambda(ds, lambda_source, inflation)


def _unlabeled_top_eigenvalue(ds: Dataset) -> Optional[float]:
    if ds.n_unlabeled == 0:
        return 0.0
    try:
        top, _ = largest_eigenvalue(SymMatrix.gram(ds.x_unlabeled, 1.0 / ds.n), shift=0.0)
    except NoConvergence:
        return None
    return top


def select_theoretical(ds: Dataset, grid: Optional[Grid] = None,
                       lambda_source: LambdaSource = LambdaSource.WHOLE, inflation: float = 1e-3,
                       lam: Optional[float] = None,
                       proportion_mode: ProportionMode = ProportionMode.MATCHED,
                       variant: TheoryVariant = TheoryVariant.CORRECTED,
                       n_jobs: Optional[int] = 1) -> SelectionResult:
    """Minimize the predicted error over the grid; no model is fitted"""
    grid = grid or Grid.default()
    started = time.perf_counter()
    lam = resolve_lambda(ds, lambda_source, inflation, lam)
    gram = cached_gram(ds)
    counts = class_counts(ds, ProportionMode(proportion_mode) is ProportionMode.MATCHED)
    top_unlabeled = _unlabeled_top_eigenvalue(ds)

    def evaluate(pair: Pair) -> GridPointResult:
        hp = HyperParams(pair[0], pair[1], lam, inflation)
        try:
            # α_u·λ_max(G_u) < λ implies convexity
            if top_unlabeled is None or hp.alpha_u * top_unlabeled >= lam:
                margin = convexity_margin(ds, hp)
                if margin <= 0:
                    raise NonConvex("lambda does not exceed the convexity threshold", margin=margin)
            stats = predict_error(ds, hp, gram=gram, counts=counts, variant=variant)
        except SKIPPABLE as e:
            return _skipped(pair, e)
        return GridPointResult(pair[0], pair[1], stats.eps_star,
                               details={"m1": stats.m1, "m2": stats.m2, "sigma2": stats.sigma2})

    results = run_parallel(evaluate, grid.points, n_jobs)
    metadata = {
        "lambda_source": LambdaSource(lambda_source).value,
        "lambda_inflation": inflation,
        "proportion_mode": ProportionMode(proportion_mode).value,
        "theory_variant": TheoryVariant(variant).value,
        "gram": gram.to_dict(),
        "class_counts": counts.to_dict(),
    }
    return _finish(results, SelectionMethod.THEORETICAL, started, lam, metadata)


def select_cross_validation(ds: Dataset, grid: Optional[Grid] = None, folds: int = 10, seed: int = 0,
                            lambda_source: LambdaSource = LambdaSource.WHOLE, inflation: float = 1e-3,
                            n_jobs: Optional[int] = 1) -> SelectionResult:
    """Stratified K-fold error on held-out labeled samples; λ is recomputed on each training split"""
    grid = grid or Grid.default()
    if folds < 2:
        raise ValidationError("folds must be at least 2", folds=folds)
    started = time.perf_counter()

    smallest_class = min(int(np.sum(ds.labels == sign)) for sign in (-1, 1))
    if smallest_class < 2:
        raise InsufficientSamples("Cross-validation needs two labeled samples per class",
                                  smallest_class=smallest_class)
    effective_folds = min(folds, smallest_class)
    if effective_folds < folds:
        logger.warning("cv_folds_reduced", requested=folds, effective=effective_folds)

    splitter = StratifiedKFold(n_splits=effective_folds, shuffle=True, random_state=int(seed) % 2 ** 32)
    splits = []
    for train_positions, test_positions in splitter.split(np.zeros(ds.n_labeled), ds.labels):
        train = ds.drop_labeled(test_positions)
        splits.append((
            train,
            resolve_lambda(train, lambda_source, inflation),
            ds.x_labeled[:, test_positions],
            ds.labels[test_positions],
        ))

    def evaluate(pair: Pair) -> GridPointResult:
        errors = []
        try:
            for train, fold_lam, test_x, test_y in splits:
                model = fit_qlds(train, HyperParams(pair[0], pair[1], fold_lam, inflation))
                errors.append(float(np.mean(predict(model, test_x) != test_y)))
        except SKIPPABLE as e:
            return _skipped(pair, e)
        return GridPointResult(pair[0], pair[1], float(np.mean(errors)))

    results = run_parallel(evaluate, grid.points, n_jobs)
    metadata = {
        "lambda_source": LambdaSource(lambda_source).value,
        "lambda_inflation": inflation,
        "folds": effective_folds,
        "requested_folds": folds,
        "folds_reduced": effective_folds < folds,
        "seed": int(seed),
    }
    return _finish(results, SelectionMethod.CROSS_VALIDATION, started,
                   resolve_lambda(ds, lambda_source, inflation), metadata)


def select_oracle(ds: Dataset, grid: Optional[Grid] = None,
                  lambda_source: LambdaSource = LambdaSource.WHOLE, inflation: float = 1e-3,
                  lam: Optional[float] = None, n_jobs: Optional[int] = 1) -> SelectionResult:
    """Minimize the true transductive error; needs the unlabeled ground truth"""
    grid = grid or Grid.default()
    ds.require_truth()
    started = time.perf_counter()
    lam = resolve_lambda(ds, lambda_source, inflation, lam)

    def evaluate(pair: Pair) -> GridPointResult:
        try:
            model = fit_qlds(ds, HyperParams(pair[0], pair[1], lam, inflation))
        except SKIPPABLE as e:
            return _skipped(pair, e)
        return GridPointResult(pair[0], pair[1], transductive_error(model, ds))

    results = run_parallel(evaluate, grid.points, n_jobs)
    metadata = {"lambda_source": LambdaSource(lambda_source).value, "lambda_inflation": inflation}
    return _finish(results, SelectionMethod.ORACLE, started, lam, metadata)


def fit_with_selection(ds: Dataset, method: Union[str, SelectionMethod], grid: Optional[Grid] = None,
                       folds: int = 10, seed: int = 0, alpha_pair: Optional[Pair] = None,
                       lambda_source: LambdaSource = LambdaSource.WHOLE, inflation: float = 1e-3,
                       proportion_mode: ProportionMode = ProportionMode.MATCHED,
                       variant: TheoryVariant = TheoryVariant.CORRECTED,
                       n_jobs: Optional[int] = 1) -> Tuple[LinearModel, SelectionResult]:
    """Select (α_ℓ, α_u) and refit on the whole dataset at the chosen point"""
    method = SelectionMethod.parse(method)
    selectors: Dict[SelectionMethod, Callable[[], SelectionResult]] = {
        SelectionMethod.THEORETICAL: lambda: select_theoretical(
            ds, grid, lambda_source, inflation, proportion_mode=proportion_mode, variant=variant, n_jobs=n_jobs),
        SelectionMethod.CROSS_VALIDATION: lambda: select_cross_validation(
            ds, grid, folds, seed, lambda_source, inflation, n_jobs=n_jobs),
        SelectionMethod.ORACLE: lambda: select_oracle(ds, grid, lambda_source, inflation, n_jobs=n_jobs),
    }

    if method is SelectionMethod.FIXED:
        if alpha_pair is None:
            raise ConfigError("A fixed selection needs an (alpha_l, alpha_u) pair")
        lam = resolve_lambda(ds, lambda_source, inflation)
        point = GridPointResult(float(alpha_pair[0]), float(alpha_pair[1]), math.nan)
        result = SelectionResult(chosen=point.pair, per_point=(point,), method=method.value,
                                 wall_clock_seconds=0.0, lam=lam,
                                 metadata={"lambda_source": LambdaSource(lambda_source).value,
                                           "lambda_inflation": inflation})
    else:
        result = selectors[method]()

    model = fit_qlds(ds, HyperParams(result.chosen[0], result.chosen[1], result.lam, inflation))
    return model, result
