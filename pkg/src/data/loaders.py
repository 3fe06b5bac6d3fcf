"""
Dataset Ingestion
CSV and libsvm readers, CSV writer and stratified labeled/unlabeled resampling
"""

import io
from pathlib import Path
from typing import Optional, Union
import numpy as np
import pandas as pd
from sklearn.datasets import load_svmlight_file
from src.core.errors import (
    ParseError, LabelDomainError, InsufficientSamples, error_handler, read_text
)
from src.core.structured_logging import get_structured_logger
from src.data.dataset import Dataset, largest_remainder
from src.data.synthetic import make_rng

PathLike = Union[str, Path]

logger = get_structured_logger(__name__)


def map_labels(values: np.ndarray) -> np.ndarray:
    """Map labels encoded as {-1,+1} or {0,1} onto {-1,+1}"""
    values = np.asarray(values, dtype=float)
    distinct = set(np.unique(values).tolist())
    if distinct <= {-1.0, 1.0}:
        return values.astype(np.int64)
    if distinct <= {0.0, 1.0}:
        return np.where(values == 0.0, -1, 1).astype(np.int64)
    offending = sorted(distinct - {-1.0, 0.0, 1.0}) or sorted(distinct)
    raise LabelDomainError(
        f"Labels must be encoded as -1/+1 or 0/1, found {offending[0]:g}",
        value=str(offending[0])
    )


def _numeric_column(frame: pd.DataFrame, column: str, allow_blank: Optional[np.ndarray] = None) -> np.ndarray:
    raw = frame[column]
    values = pd.to_numeric(raw, errors="coerce")
    bad = values.isna().to_numpy()
    if allow_blank is not None:
        blank = raw.isna().to_numpy() | (raw.astype(str).str.strip() == "").to_numpy()
        bad &= ~(blank & allow_blank)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        # +2: one-based numbering after the header line
        raise ParseError(
            f"Non-numeric value {raw.iloc[row]!r} in column {column!r} at row {row + 2}",
            row=row + 2, column=column
        )
    return values.to_numpy(dtype=float)


def load_csv(path: PathLike, label_column: str = "label", labeled_flag_column: str = "labeled",
             name: Optional[str] = None) -> Dataset:
    """Read a dataset from CSV with one sample per row.

    Every column other than the label and flag columns is a feature, in file order.
    Unlabeled rows keep their label, when present, as ground truth.
    """
    text = read_text(path)
    try:
        frame = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"Cannot parse CSV file {path}: {e}", path=str(path)) from e

    for column in (label_column, labeled_flag_column):
        if column not in frame.columns:
            raise ParseError(f"Missing column {column!r} in {path}", column=column, path=str(path))
    frame = frame.replace({"": np.nan})

    flags = _numeric_column(frame, labeled_flag_column)
    if not np.all(np.isin(flags, (0.0, 1.0))):
        row = int(np.flatnonzero(~np.isin(flags, (0.0, 1.0)))[0])
        raise ParseError(f"Labeled flag must be 0 or 1 at row {row + 2}", row=row + 2, column=labeled_flag_column)
    is_labeled = flags == 1.0

    feature_columns = [c for c in frame.columns if c not in (label_column, labeled_flag_column)]
    if not feature_columns:
        raise ParseError(f"No feature columns in {path}", path=str(path))
    features = np.column_stack([_numeric_column(frame, c) for c in feature_columns]).T

    raw_labels = _numeric_column(frame, label_column, allow_blank=~is_labeled)
    known = ~np.isnan(raw_labels)
    labels = np.zeros(raw_labels.size, dtype=np.int64)
    if known.any():
        labels[known] = map_labels(raw_labels[known])

    labeled_idx = np.flatnonzero(is_labeled)
    unlabeled_idx = np.flatnonzero(~is_labeled)
    truth = labels[unlabeled_idx] if known[unlabeled_idx].all() else None

    ds = Dataset(
        features=features,
        labeled_idx=labeled_idx,
        unlabeled_idx=unlabeled_idx,
        labels=labels[labeled_idx],
        true_unlabeled_labels=truth,
        name=name or Path(path).stem,
    )
    logger.info("dataset_loaded", format="csv", path=str(path), d=ds.d, n=ds.n,
                n_labeled=ds.n_labeled, n_unlabeled=ds.n_unlabeled)
    return ds


def stratified_labeled_sample(labels: np.ndarray, n_labeled: int, seed: int) -> np.ndarray:
    """Sorted indices of a seeded sample of n_labeled samples, stratified by label"""
    labels = np.asarray(labels)
    if n_labeled > labels.size:
        raise InsufficientSamples(
            f"Requested {n_labeled} labeled samples from {labels.size}", n_labeled=n_labeled, n=int(labels.size)
        )
    rng = make_rng(seed)
    classes = [np.flatnonzero(labels == value) for value in (-1, 1)]
    quotas = largest_remainder(n_labeled, [members.size for members in classes])
    chosen = [rng.choice(members, size=int(quota), replace=False) for members, quota in zip(classes, quotas)]
    return np.sort(np.concatenate(chosen).astype(np.int64))


def resplit(ds: Dataset, n_labeled: int, seed: int) -> Dataset:
    """Draw a new stratified labeled set; every other sample becomes unlabeled with its label as truth"""
    all_labels = ds.all_labels()
    labeled_idx = stratified_labeled_sample(all_labels, n_labeled, seed)
    return ds.with_split(labeled_idx, all_labels[labeled_idx], true_labels=all_labels)


def load_libsvm(path: PathLike, n_labeled: Optional[int], seed: int = 0, name: Optional[str] = None) -> Dataset:
    """Read a libsvm file (one-based indices) and draw a stratified labeled set.

    With n_labeled None every sample stays labeled.
    """
    text = read_text(path)
    try:
        sparse, targets = load_svmlight_file(io.BytesIO(text.encode("utf-8")), zero_based=False)
    except ValueError as e:
        raise ParseError(f"Cannot parse libsvm file {path}: {e}", path=str(path)) from e

    labels = map_labels(targets)
    features = np.asarray(sparse.toarray(), dtype=float).T
    full = Dataset(
        features=features,
        labeled_idx=np.arange(labels.size),
        unlabeled_idx=np.zeros(0, dtype=np.int64),
        labels=labels,
        name=name or Path(path).stem,
    )
    ds = full if n_labeled is None else resplit(full, n_labeled, seed)
    logger.info("dataset_loaded", format="libsvm", path=str(path), d=ds.d, n=ds.n,
                n_labeled=ds.n_labeled, n_unlabeled=ds.n_unlabeled, seed=seed)
    return ds


def save_csv(ds: Dataset, path: PathLike) -> Path:
    """Write one row per sample: feature columns f1..fd, then label and labeled flag"""
    path = Path(path)
    frame = pd.DataFrame(ds.features.T, columns=[f"f{i + 1}" for i in range(ds.d)])

    label = pd.array([pd.NA] * ds.n, dtype="Int64")
    label[ds.labeled_idx] = ds.labels
    if ds.true_unlabeled_labels is not None:
        label[ds.unlabeled_idx] = ds.true_unlabeled_labels
    flag = np.zeros(ds.n, dtype=np.int64)
    flag[ds.labeled_idx] = 1

    frame["label"] = label
    frame["labeled"] = flag
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False)
    except OSError as e:
        raise error_handler.handle_os_error(e, path) from e
    return path
