"""
Synthetic Gaussian Mixtures
Seeded two-class isotropic mixtures with opposite means
"""

import json
from dataclasses import dataclass, asdict, replace
from pathlib import Path
from typing import Any, Dict, Union
import numpy as np
from src.core.errors import ConfigError, ParseError, read_text
from src.data.dataset import Dataset


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; identical streams on every platform for a given seed"""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class GmmSpec:
    """Two classes N(-μ, I) and N(+μ, I) in dimension d with μ = (mu_norm/2)·e₁"""
    d: int
    mu_norm: float
    n_l1: int
    n_l2: int
    n_u1: int
    n_u2: int
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError("d must be positive", key="d", value=str(self.d))
        if not self.mu_norm > 0:
            raise ConfigError("mu_norm must be positive", key="mu_norm", value=str(self.mu_norm))
        for key in ("n_l1", "n_l2", "n_u1", "n_u2"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be nonnegative", key=key, value=str(getattr(self, key)))
        if self.n_l1 + self.n_l2 + self.n_u1 + self.n_u2 == 0:
            raise ConfigError("a mixture needs at least one sample")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a nonnegative 64-bit integer", key="seed", value=str(self.seed))

    @property
    def n(self) -> int:
        return self.n_l1 + self.n_l2 + self.n_u1 + self.n_u2

    @property
    def mean(self) -> np.ndarray:
        mu = np.zeros(self.d)
        mu[0] = self.mu_norm / 2.0
        return mu

    def with_seed(self, seed: int) -> "GmmSpec":
        return replace(self, seed=int(seed))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "GmmSpec":
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown mixture keys: {', '.join(sorted(unknown))}")
        try:
            return cls(
                d=int(values["d"]),
                mu_norm=float(values["mu_norm"]),
                n_l1=int(values.get("n_l1", 0)),
                n_l2=int(values.get("n_l2", 0)),
                n_u1=int(values.get("n_u1", 0)),
                n_u2=int(values.get("n_u2", 0)),
                seed=int(values.get("seed", 0)),
            )
        except KeyError as e:
            raise ConfigError(f"Missing mixture key {e.args[0]}", key=e.args[0]) from e
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid mixture value: {e}") from e

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "GmmSpec":
        try:
            values = json.loads(read_text(path))
        except json.JSONDecodeError as e:
            raise ParseError(f"Invalid JSON in {path}: {e.msg}", row=e.lineno, path=str(path)) from e
        if not isinstance(values, dict):
            raise ParseError(f"Mixture file {path} must hold a JSON object", path=str(path))
        return cls.from_dict(values)


def generate_gmm(spec: GmmSpec, name: str = "gmm") -> Dataset:
    """Draw a mixture dataset.

    Columns are ordered labeled class 1, labeled class 2, unlabeled class 1, unlabeled class 2.
    """
    rng = make_rng(spec.seed)
    noise = rng.standard_normal((spec.d, spec.n))

    class_of_column = np.concatenate([
        np.full(spec.n_l1, -1), np.full(spec.n_l2, 1),
        np.full(spec.n_u1, -1), np.full(spec.n_u2, 1),
    ]).astype(np.int64)
    features = noise + np.outer(spec.mean, class_of_column)

    n_labeled = spec.n_l1 + spec.n_l2
    return Dataset(
        features=features,
        labeled_idx=np.arange(n_labeled),
        unlabeled_idx=np.arange(n_labeled, spec.n),
        labels=class_of_column[:n_labeled],
        true_unlabeled_labels=class_of_column[n_labeled:],
        name=name,
    )
