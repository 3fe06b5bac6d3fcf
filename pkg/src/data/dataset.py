"""
Dataset Model
Feature matrix with a labeled/unlabeled partition, class counting and centering
"""

import hashlib
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Optional, Sequence
import numpy as np
from src.core.errors import (
    ValidationError, LabelDomainError, MissingTruth, InsufficientSamples, DimensionMismatch
)

CLASS_LABELS = (-1, 1)


def _readonly(values, dtype) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Dataset:
    """Samples as the columns of a d×n matrix, split into labeled and unlabeled indices.

    Class 1 carries label -1 and class 2 carries label +1.
    """
    features: np.ndarray
    labeled_idx: np.ndarray
    unlabeled_idx: np.ndarray
    labels: np.ndarray
    true_unlabeled_labels: Optional[np.ndarray] = None
    name: str = "dataset"

    def __post_init__(self):
        features = np.array(self.features, dtype=float)
        if features.ndim != 2:
            raise DimensionMismatch(f"features must be a d×n matrix, got {features.ndim} dimensions")
        if not np.all(np.isfinite(features)):
            raise ValidationError("features contain non-finite values", dataset=self.name)
        n = features.shape[1]

        labeled_idx = np.asarray(self.labeled_idx, dtype=np.int64).reshape(-1)
        unlabeled_idx = np.asarray(self.unlabeled_idx, dtype=np.int64).reshape(-1)
        combined = np.concatenate([labeled_idx, unlabeled_idx])
        if combined.size != n or not np.array_equal(np.sort(combined), np.arange(n)):
            raise ValidationError(
                "labeled and unlabeled indices must partition the samples",
                n=n, n_labeled=int(labeled_idx.size), n_unlabeled=int(unlabeled_idx.size)
            )

        labels = np.asarray(self.labels).reshape(-1)
        if labels.size != labeled_idx.size:
            raise DimensionMismatch(
                f"{labels.size} labels for {labeled_idx.size} labeled samples", dataset=self.name
            )
        _check_label_domain(labels)

        truth = self.true_unlabeled_labels
        if truth is not None:
            truth = np.asarray(truth).reshape(-1)
            if truth.size != unlabeled_idx.size:
                raise DimensionMismatch(
                    f"{truth.size} true labels for {unlabeled_idx.size} unlabeled samples",
                    dataset=self.name
                )
            _check_label_domain(truth)
            truth = _readonly(truth, np.int64)

        object.__setattr__(self, "features", _readonly(features, float))
        object.__setattr__(self, "labeled_idx", _readonly(labeled_idx, np.int64))
        object.__setattr__(self, "unlabeled_idx", _readonly(unlabeled_idx, np.int64))
        object.__setattr__(self, "labels", _readonly(labels, np.int64))
        object.__setattr__(self, "true_unlabeled_labels", truth)

    @property
    def d(self) -> int:
        return int(self.features.shape[0])

    @property
    def n(self) -> int:
        return int(self.features.shape[1])

    @property
    def n_labeled(self) -> int:
        return int(self.labeled_idx.size)

    @property
    def n_unlabeled(self) -> int:
        return int(self.unlabeled_idx.size)

    @property
    def x_labeled(self) -> np.ndarray:
        return self.features[:, self.labeled_idx]

    @property
    def x_unlabeled(self) -> np.ndarray:
        return self.features[:, self.unlabeled_idx]

    @property
    def has_truth(self) -> bool:
        return self.true_unlabeled_labels is not None or self.n_unlabeled == 0

    def require_truth(self) -> np.ndarray:
        if self.n_unlabeled == 0:
            return np.zeros(0, dtype=np.int64)
        if self.true_unlabeled_labels is None:
            raise MissingTruth("Ground-truth labels of the unlabeled samples are required", dataset=self.name)
        return self.true_unlabeled_labels

    def all_labels(self) -> np.ndarray:
        """Label of every sample in column order, using ground truth for the unlabeled part"""
        labels = np.zeros(self.n, dtype=np.int64)
        labels[self.labeled_idx] = self.labels
        labels[self.unlabeled_idx] = self.require_truth()
        return labels

    @cached_property
    def fingerprint(self) -> str:
        """Content hash of features and split"""
        digest = hashlib.sha256()
        digest.update(np.asarray(self.features.shape, dtype=np.int64).tobytes())
        digest.update(np.ascontiguousarray(self.features).tobytes())
        digest.update(self.labeled_idx.tobytes())
        digest.update(self.labels.tobytes())
        return digest.hexdigest()

    def with_features(self, features: np.ndarray) -> "Dataset":
        return replace(self, features=features)

    def with_split(self, labeled_idx: Sequence[int], labels: Sequence[int],
                   true_labels: Optional[np.ndarray] = None) -> "Dataset":
        """Same samples under a new labeled set; true_labels gives every sample's label, if known"""
        labeled_idx = np.asarray(labeled_idx, dtype=np.int64)
        mask = np.ones(self.n, dtype=bool)
        mask[labeled_idx] = False
        unlabeled_idx = np.flatnonzero(mask)
        truth = None if true_labels is None else np.asarray(true_labels)[unlabeled_idx]
        return replace(self, labeled_idx=labeled_idx, unlabeled_idx=unlabeled_idx,
                       labels=np.asarray(labels), true_unlabeled_labels=truth)

    def drop_labeled(self, positions: Sequence[int]) -> "Dataset":
        """Remove the samples at the given positions of labeled_idx entirely"""
        positions = np.asarray(positions, dtype=np.int64)
        keep_labeled = np.ones(self.n_labeled, dtype=bool)
        keep_labeled[positions] = False

        keep_columns = np.ones(self.n, dtype=bool)
        keep_columns[self.labeled_idx[positions]] = False
        new_position = np.cumsum(keep_columns) - 1

        return replace(
            self,
            features=self.features[:, keep_columns],
            labeled_idx=new_position[self.labeled_idx[keep_labeled]],
            unlabeled_idx=new_position[self.unlabeled_idx],
            labels=self.labels[keep_labeled],
        )


def _check_label_domain(labels: np.ndarray) -> None:
    if labels.size and not np.all(np.isin(labels, CLASS_LABELS)):
        bad = labels[~np.isin(labels, CLASS_LABELS)]
        raise LabelDomainError(f"Labels must be -1 or +1, found {bad[0]!r}", value=str(bad[0]))


@dataclass(frozen=True)
class ClassCounts:
    """Per-class labeled and unlabeled sample counts"""
    n_l1: int
    n_l2: int
    n_u1: int
    n_u2: int
    d: int

    def __post_init__(self):
        if min(self.n_l1, self.n_l2, self.n_u1, self.n_u2) < 0:
            raise ValidationError("class counts must be nonnegative")
        if self.n <= 0:
            raise InsufficientSamples("class counts sum to zero")

    @property
    def n(self) -> int:
        return self.n_l1 + self.n_l2 + self.n_u1 + self.n_u2

    @property
    def n_labeled(self) -> int:
        return self.n_l1 + self.n_l2

    @property
    def n_unlabeled(self) -> int:
        return self.n_u1 + self.n_u2

    @property
    def c_l(self) -> np.ndarray:
        return np.array([self.n_l1, self.n_l2], dtype=float) / self.n

    @property
    def c_u(self) -> np.ndarray:
        return np.array([self.n_u1, self.n_u2], dtype=float) / self.n

    @property
    def c0(self) -> float:
        return self.d / self.n

    def swapped(self) -> "ClassCounts":
        return ClassCounts(self.n_l2, self.n_l1, self.n_u2, self.n_u1, self.d)

    def to_dict(self):
        return {"n_l1": self.n_l1, "n_l2": self.n_l2, "n_u1": self.n_u1, "n_u2": self.n_u2, "d": self.d}


def largest_remainder(total: int, weights: Sequence[float]) -> np.ndarray:
    """Integers proportional to weights summing to total; leftover units go to the largest
    fractional parts, earliest index first on ties"""
    weights = np.asarray(weights, dtype=float)
    if total == 0 or weights.sum() == 0:
        return np.zeros(weights.size, dtype=np.int64)
    quotas = total * weights / weights.sum()
    counts = np.floor(quotas).astype(np.int64)
    leftover = int(total - counts.sum())
    order = np.argsort(-(quotas - counts), kind="stable")
    counts[order[:leftover]] += 1
    return counts


def class_counts(ds: Dataset, assume_matched_proportions: bool = True) -> ClassCounts:
    """Class counts, inferring the unlabeled split from labeled proportions unless truth is requested"""
    if ds.n_labeled < 1:
        raise InsufficientSamples("At least one labeled sample is required", dataset=ds.name)

    n_l1 = int(np.sum(ds.labels == -1))
    n_l2 = int(np.sum(ds.labels == 1))

    if ds.n_unlabeled == 0:
        n_u1, n_u2 = 0, 0
    elif assume_matched_proportions:
        n_u1, n_u2 = (int(c) for c in largest_remainder(ds.n_unlabeled, [n_l1, n_l2]))
    else:
        truth = ds.require_truth()
        n_u1 = int(np.sum(truth == -1))
        n_u2 = int(np.sum(truth == 1))

    return ClassCounts(n_l1=n_l1, n_l2=n_l2, n_u1=n_u1, n_u2=n_u2, d=ds.d)


def center(ds: Dataset) -> Dataset:
    """Subtract the mean over all samples from every feature"""
    features = ds.features - ds.features.mean(axis=1, keepdims=True)
    return ds.with_features(features)


def feature_mean(ds: Dataset) -> np.ndarray:
    return ds.features.mean(axis=1)
