"""
Self-Training Baseline
Iterative pseudo-labeling around the least-squares SVM with a cross-validated confidence threshold
"""

from dataclasses import dataclass, asdict
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple
import numpy as np
from sklearn.model_selection import StratifiedKFold
from src.core.errors import InsufficientSamples, ValidationError
from src.core.structured_logging import get_structured_logger
from src.core.workers import run_parallel
from src.data.dataset import Dataset
from src.qlds.solver import (
    HyperParams, LambdaSource, LinearModel, decision_scores, default_lambda, fit_qlds,
    labels_from_scores, predict
)

logger = get_structured_logger(__name__)


class ThresholdMode(str, Enum):
    QUANTILE = "quantile"
    ABSOLUTE = "absolute"


@dataclass(frozen=True)
class SelfTrainConfig:
    threshold_grid: Tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9)
    max_rounds: int = 10
    inner_cv_folds: int = 5
    threshold_mode: ThresholdMode = ThresholdMode.QUANTILE
    seed: int = 0

    def __post_init__(self):
        if not self.threshold_grid:
            raise ValidationError("threshold_grid must not be empty")
        if any(t < 0 for t in self.threshold_grid):
            raise ValidationError("thresholds must be nonnegative")
        if ThresholdMode(self.threshold_mode) is ThresholdMode.QUANTILE and any(t > 1 for t in self.threshold_grid):
            raise ValidationError("quantile thresholds must lie in [0, 1]")
        if self.max_rounds < 1:
            raise ValidationError("max_rounds must be at least 1")
        if self.inner_cv_folds < 2:
            raise ValidationError("inner_cv_folds must be at least 2")


@dataclass(frozen=True)
class RoundRecord:
    round: int
    pool_size: int
    remaining_unlabeled: int
    threshold: float
    threshold_value: float
    cv_error: float
    added: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _cut(confidence: np.ndarray, threshold: float, mode: ThresholdMode) -> float:
    if mode is ThresholdMode.ABSOLUTE or confidence.size == 0:
        return float(threshold)
    return float(np.quantile(confidence, threshold))


def _pseudo_label(ds: Dataset, model: LinearModel, threshold: float,
                  mode: ThresholdMode) -> Tuple[np.ndarray, np.ndarray, float]:
    """Unlabeled indices whose |score| reaches the cut, their predicted labels and the cut"""
    scores = decision_scores(model, ds.x_unlabeled)
    confidence = np.abs(scores)
    cut = _cut(confidence, threshold, mode)
    selected = confidence >= cut
    return ds.unlabeled_idx[selected], labels_from_scores(scores[selected]), cut


def _augmented(ds: Dataset, indices: np.ndarray, labels: np.ndarray) -> Dataset:
    if indices.size == 0:
        return ds
    return ds.with_split(np.concatenate([ds.labeled_idx, indices]), np.concatenate([ds.labels, labels]))


def _threshold_cv_error(ds: Dataset, original_positions: np.ndarray, hp: HyperParams,
                        cfg: SelfTrainConfig, threshold: float, n_jobs: Optional[int]) -> float:
    """Held-out error on the original labeled samples after one pseudo-labeling step at threshold"""
    original_labels = ds.labels[original_positions]
    smallest_class = min(int(np.sum(original_labels == sign)) for sign in (-1, 1))
    folds = min(cfg.inner_cv_folds, smallest_class)
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=int(cfg.seed) % 2 ** 32)
    splits = list(splitter.split(np.zeros(original_positions.size), original_labels))

    def fold_error(split) -> float:
        _, test = split
        held_out = original_positions[test]
        train = ds.drop_labeled(held_out)
        base = fit_qlds(train, hp)
        indices, labels, _ = _pseudo_label(train, base, threshold, ThresholdMode(cfg.threshold_mode))
        model = fit_qlds(_augmented(train, indices, labels), hp) if indices.size else base
        return float(np.mean(predict(model, ds.x_labeled[:, held_out]) != ds.labels[held_out]))

    return float(np.mean(run_parallel(fold_error, splits, n_jobs)))


def self_train(ds: Dataset, cfg: Optional[SelfTrainConfig] = None, lam: Optional[float] = None,
               lambda_source: LambdaSource = LambdaSource.WHOLE, inflation: float = 1e-3,
               n_jobs: Optional[int] = 1) -> Tuple[LinearModel, List[RoundRecord]]:
    """Self-train a least-squares SVM, returning the final model and a per-round history"""
    cfg = cfg or SelfTrainConfig()
    mode = ThresholdMode(cfg.threshold_mode)
    smallest_class = min(int(np.sum(ds.labels == sign)) for sign in (-1, 1))
    if smallest_class < 2:
        raise InsufficientSamples("Self-training needs two labeled samples per class",
                                  smallest_class=smallest_class)

    if lam is None:
        lam = default_lambda(ds, lambda_source, inflation)
    hp = HyperParams(1.0, 0.0, lam, inflation)

    current = ds
    original_positions = np.arange(ds.n_labeled)
    model = fit_qlds(current, hp)
    history: List[RoundRecord] = []

    for round_number in range(1, cfg.max_rounds + 1):
        if current.n_unlabeled == 0:
            break

        cv_errors = [
            _threshold_cv_error(current, original_positions, hp, cfg, threshold, n_jobs)
            for threshold in cfg.threshold_grid
        ]
        best = int(np.argmin(cv_errors))
        threshold = cfg.threshold_grid[best]
        indices, labels, cut = _pseudo_label(current, model, threshold, mode)

        history.append(RoundRecord(
            round=round_number,
            pool_size=current.n_labeled,
            remaining_unlabeled=current.n_unlabeled,
            threshold=float(threshold),
            threshold_value=cut,
            cv_error=cv_errors[best],
            added=int(indices.size),
        ))
        logger.info("self_training_round", round=round_number, pool_size=current.n_labeled,
                    added=int(indices.size), threshold=float(threshold), cv_error=cv_errors[best])

        if indices.size == 0:
            break
        current = _augmented(current, indices, labels)
        model = fit_qlds(current, hp)

    return LinearModel(omega=model.omega, n_train=ds.n, hyper=hp), history
