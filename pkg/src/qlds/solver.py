"""
QLDS Solver
Closed-form quadratic low-density-separation weights, decision scores, the convexity guard and the λ policy
"""

import threading
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Dict, Optional, Tuple
import numpy as np
from src.core.errors import (
    ValidationError, NonConvex, NoConvergence, InsufficientSamples, DimensionMismatch
)
from src.core.structured_logging import get_structured_logger
from src.data.dataset import Dataset
from src.numerics.linalg import SymMatrix, cholesky, largest_eigenvalue

logger = get_structured_logger(__name__)


class LambdaSource(str, Enum):
    """Gram matrix whose top eigenvalue sets the default λ"""
    WHOLE = "whole"
    UNLABELED = "unlabeled"


@dataclass(frozen=True)
class HyperParams:
    """Loss weights (α_ℓ, α_u), ridge λ and the λ inflation factor"""
    alpha_l: float
    alpha_u: float
    lam: float
    lambda_inflation: float = 1e-3

    def __post_init__(self):
        if not (self.alpha_l >= 0 and self.alpha_u >= 0):
            raise ValidationError("alpha_l and alpha_u must be nonnegative",
                                  alpha_l=self.alpha_l, alpha_u=self.alpha_u)
        if not self.lam > 0:
            raise ValidationError("lambda must be positive", lam=self.lam)

    def scaled(self, factor: float) -> "HyperParams":
        return replace(self, alpha_l=self.alpha_l * factor, alpha_u=self.alpha_u * factor, lam=self.lam * factor)

    def to_dict(self) -> Dict[str, float]:
        return {"alpha_l": self.alpha_l, "alpha_u": self.alpha_u, "lambda": self.lam,
                "lambda_inflation": self.lambda_inflation}


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Fitted weights; scores are omegaᵀx/√n_train"""
    omega: np.ndarray
    n_train: int
    hyper: HyperParams
    feature_mean: Optional[np.ndarray] = None

    def __post_init__(self):
        omega = np.array(self.omega, dtype=float).reshape(-1)
        if not np.all(np.isfinite(omega)):
            raise ValidationError("model weights are not finite")
        if self.n_train < 1:
            raise ValidationError("n_train must be positive", n_train=self.n_train)
        omega.setflags(write=False)
        object.__setattr__(self, "omega", omega)

    @property
    def d(self) -> int:
        return int(self.omega.size)

    def to_dict(self) -> Dict[str, Any]:
        document: Dict[str, Any] = {
            "omega": self.omega.tolist(),
            "n_train": self.n_train,
            "alpha_l": self.hyper.alpha_l,
            "alpha_u": self.hyper.alpha_u,
            "lambda": self.hyper.lam,
        }
        if self.feature_mean is not None:
            document["feature_mean"] = np.asarray(self.feature_mean, dtype=float).tolist()
        return document

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "LinearModel":
        try:
            hyper = HyperParams(float(document["alpha_l"]), float(document["alpha_u"]), float(document["lambda"]))
            mean = document.get("feature_mean")
            model = cls(
                omega=np.asarray(document["omega"], dtype=float),
                n_train=int(document["n_train"]),
                hyper=hyper,
                feature_mean=None if mean is None else np.asarray(mean, dtype=float),
            )
        except KeyError as e:
            raise ValidationError(f"Model document lacks key {e.args[0]}", key=e.args[0]) from e
        except (TypeError, ValueError) as e:
            raise ValidationError(f"Malformed model document: {e}") from e
        if model.feature_mean is not None and model.feature_mean.size != model.d:
            raise DimensionMismatch("feature_mean and omega differ in length")
        return model


class FitCounter:
    """Process-wide count of closed-form fits"""

    def __init__(self):
        self._count = 0
        self._lock = threading.Lock()

    def increment(self) -> None:
        with self._lock:
            self._count += 1

    @property
    def value(self) -> int:
        return self._count

    def reset(self) -> None:
        with self._lock:
            self._count = 0


fit_counter = FitCounter()


def gram_matrices(ds: Dataset) -> Tuple[SymMatrix, SymMatrix]:
    """(1/n)X_ℓX_ℓᵀ and (1/n)X_uX_uᵀ"""
    scale = 1.0 / ds.n
    return SymMatrix.gram(ds.x_labeled, scale), SymMatrix.gram(ds.x_unlabeled, scale)


def default_lambda(ds: Dataset, source: LambdaSource = LambdaSource.WHOLE, inflation: float = 1e-3) -> float:
    """(1 + inflation) times the top eigenvalue of the 1/n-scaled Gram of all or only unlabeled samples"""
    source = LambdaSource(source)
    if source is LambdaSource.UNLABELED:
        if ds.n_unlabeled < 1:
            raise InsufficientSamples("The unlabeled lambda source needs unlabeled samples", dataset=ds.name)
        gram = SymMatrix.gram(ds.x_unlabeled, 1.0 / ds.n)
    else:
        gram = SymMatrix.gram(ds.features, 1.0 / ds.n)

    top, _ = largest_eigenvalue(gram, shift=0.0)
    lam = (1.0 + inflation) * top
    logger.debug("default_lambda", source=source.value, top_eigenvalue=top, inflation=inflation, lam=lam)
    return lam


def convexity_margin(ds: Dataset, hp: HyperParams) -> float:
    """λ − λ_max(α_u·G_u − α_ℓ·G_ℓ); the objective is strictly convex iff this is positive"""
    g_l, g_u = gram_matrices(ds)
    top, _ = largest_eigenvalue(g_u.scaled(hp.alpha_u) - g_l.scaled(hp.alpha_l))
    return hp.lam - top


def system_matrix(ds: Dataset, hp: HyperParams) -> SymMatrix:
    """λI + α_ℓ·G_ℓ − α_u·G_u"""
    g_l, g_u = gram_matrices(ds)
    return (g_l.scaled(hp.alpha_l) - g_u.scaled(hp.alpha_u)).shifted(hp.lam)


def fit_qlds(ds: Dataset, hp: HyperParams) -> LinearModel:
    """Solve (λI + α_ℓG_ℓ − α_uG_u) ω = X_ℓy/√n"""
    if ds.n_labeled < 1:
        raise InsufficientSamples("Fitting needs at least one labeled sample", dataset=ds.name)

    # positive definite exactly when the objective is strictly convex
    factor = cholesky(system_matrix(ds, hp))
    if factor is None:
        try:
            margin: Optional[float] = convexity_margin(ds, hp)
        except NoConvergence:
            margin = None
        raise NonConvex(
            "lambda does not exceed the convexity threshold",
            margin=margin, alpha_l=hp.alpha_l, alpha_u=hp.alpha_u, lam=hp.lam
        )

    rhs = ds.x_labeled @ ds.labels.astype(float) / np.sqrt(ds.n)
    omega = factor.solve(rhs)
    fit_counter.increment()
    logger.debug("qlds_fitted", dataset=ds.name, **hp.to_dict())
    return LinearModel(omega=omega, n_train=ds.n, hyper=hp)


def decision_scores(model: LinearModel, points: np.ndarray) -> np.ndarray:
    """f(x) = omegaᵀx/√n_train for every column of points"""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] != model.d:
        raise DimensionMismatch(
            f"Points of shape {points.shape} do not match a model of dimension {model.d}"
        )
    return model.omega @ points / np.sqrt(model.n_train)


def labels_from_scores(scores: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(scores) < 0, -1, 1).astype(np.int64)


def predict(model: LinearModel, points: np.ndarray) -> np.ndarray:
    """-1 where the score is negative, +1 otherwise"""
    return labels_from_scores(decision_scores(model, points))


def transductive_error(model: LinearModel, ds: Dataset) -> float:
    """Misclassification rate on the dataset's unlabeled samples"""
    truth = ds.require_truth()
    if truth.size == 0:
        raise InsufficientSamples("No unlabeled samples to evaluate", dataset=ds.name)
    return float(np.mean(predict(model, ds.x_unlabeled) != truth))


def loss_value(ds: Dataset, hp: HyperParams, omega: np.ndarray) -> float:
    """(α_ℓ/2)Σ_ℓ(y − ωᵀx/√n)² − (α_u/2n)Σ_u(ωᵀx)² + (λ/2)‖ω‖²"""
    omega = np.asarray(omega, dtype=float)
    root_n = np.sqrt(ds.n)
    labeled_margin = omega @ ds.x_labeled / root_n
    unlabeled_margin = omega @ ds.x_unlabeled / root_n
    return float(
        0.5 * hp.alpha_l * np.sum((ds.labels - labeled_margin) ** 2)
        - 0.5 * hp.alpha_u * np.sum(unlabeled_margin ** 2)
        + 0.5 * hp.lam * omega @ omega
    )


def loss_gradient(ds: Dataset, hp: HyperParams, omega: np.ndarray) -> np.ndarray:
    """Gradient of loss_value; its zero is alpha_l times the closed-form weights"""
    omega = np.asarray(omega, dtype=float)
    rhs = hp.alpha_l * ds.x_labeled @ ds.labels.astype(float) / np.sqrt(ds.n)
    return system_matrix(ds, hp).entries @ omega - rhs
