"""
Loss Laboratory
Gradient training of labeled/unlabeled loss combinations with an adaptive-moment optimizer
"""

import math
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple
import numpy as np
from scipy.special import expit
from src.core.errors import DivergenceDetected, ValidationError
from src.core.structured_logging import get_structured_logger
from src.core.workers import run_parallel
from src.data.dataset import Dataset
from src.qlds.solver import HyperParams, LinearModel, transductive_error

logger = get_structured_logger(__name__)

Triple = Tuple[float, float, float]


class LabeledLoss(str, Enum):
    SQUARE = "square"
    HINGE_SURROGATE = "hinge_surrogate"
    LOG_LOSS = "log_loss"


class UnlabeledLoss(str, Enum):
    QUADRATIC_MARGIN = "quadratic_margin"
    EXP_SURROGATE = "exp_surrogate"


@dataclass(frozen=True)
class LossSpec:
    labeled_loss: LabeledLoss = LabeledLoss.SQUARE
    unlabeled_loss: UnlabeledLoss = UnlabeledLoss.QUADRATIC_MARGIN
    gamma: float = 20.0
    exp_coef: float = 3.0

    def __post_init__(self):
        if not (self.gamma > 0 and self.exp_coef > 0):
            raise ValidationError("gamma and exp_coef must be positive", gamma=self.gamma, exp_coef=self.exp_coef)
        object.__setattr__(self, "labeled_loss", LabeledLoss(self.labeled_loss))
        object.__setattr__(self, "unlabeled_loss", UnlabeledLoss(self.unlabeled_loss))

    @property
    def name(self) -> str:
        return f"{self.labeled_loss.value}+{self.unlabeled_loss.value}"


def all_specs() -> List[LossSpec]:
    """The six labeled × unlabeled combinations"""
    return [LossSpec(labeled, unlabeled) for labeled in LabeledLoss for unlabeled in UnlabeledLoss]


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    first_moment_decay: float = 0.9
    second_moment_decay: float = 0.999
    epsilon_hat: float = 1e-8
    epochs: int = 2000
    seed: int = 0

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.epsilon_hat > 0 and self.weight_decay >= 0):
            raise ValidationError("learning_rate and epsilon_hat must be positive, weight_decay nonnegative")
        if not (0 < self.first_moment_decay < 1 and 0 < self.second_moment_decay < 1):
            raise ValidationError("moment decays must lie in (0, 1)")
        if self.epochs < 0:
            raise ValidationError("epochs must be nonnegative", epochs=self.epochs)


def _labeled_terms(spec: LossSpec, y: np.ndarray, margin: np.ndarray) -> Tuple[float, np.ndarray]:
    """Summed loss and its derivative with respect to each margin"""
    if spec.labeled_loss is LabeledLoss.SQUARE:
        residual = y - margin
        return 0.5 * float(residual @ residual), -residual
    if spec.labeled_loss is LabeledLoss.HINGE_SURROGATE:
        z = spec.gamma * (1.0 - y * margin)
        return float(np.sum(np.logaddexp(0.0, z))) / spec.gamma, -y * expit(z)
    z = -y * margin
    return float(np.sum(np.logaddexp(0.0, z))), -y * expit(z)


def _unlabeled_terms(spec: LossSpec, margin: np.ndarray) -> Tuple[float, np.ndarray]:
    if spec.unlabeled_loss is UnlabeledLoss.QUADRATIC_MARGIN:
        return -0.5 * float(margin @ margin), -margin
    bump = np.exp(-spec.exp_coef * margin ** 2)
    return float(np.sum(bump)), -2.0 * spec.exp_coef * margin * bump


def loss_and_gradient(spec: LossSpec, hp: HyperParams, ds: Dataset,
                      omega: np.ndarray) -> Tuple[float, np.ndarray]:
    """α_ℓ·Σ L(y, m) + α_u·Σ U(m) + (λ/2)‖ω‖² with margins m = ωᵀx/√n, and its gradient"""
    omega = np.asarray(omega, dtype=float)
    root_n = math.sqrt(ds.n)
    labeled_value, labeled_slope = _labeled_terms(spec, ds.labels.astype(float), omega @ ds.x_labeled / root_n)
    unlabeled_value, unlabeled_slope = _unlabeled_terms(spec, omega @ ds.x_unlabeled / root_n)

    value = hp.alpha_l * labeled_value + hp.alpha_u * unlabeled_value + 0.5 * hp.lam * float(omega @ omega)
    gradient = (
        hp.alpha_l * ds.x_labeled @ labeled_slope
        + hp.alpha_u * ds.x_unlabeled @ unlabeled_slope
    ) / root_n + hp.lam * omega
    return value, gradient


class AdamOptimizer:
    """Adaptive moment estimation with bias-corrected moments"""

    def __init__(self, cfg: OptimConfig):
        self.lr = cfg.learning_rate
        self.beta1 = cfg.first_moment_decay
        self.beta2 = cfg.second_moment_decay
        self.epsilon = cfg.epsilon_hat
        self.weight_decay = cfg.weight_decay
        self.m: Optional[np.ndarray] = None
        self.v: Optional[np.ndarray] = None
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> None:
        """Update params in place"""
        if self.m is None or self.v is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1

        g = grads + self.weight_decay * params
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t

        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * (g * g)

        denom = np.sqrt(self.v / bc2) + self.epsilon
        params -= (self.lr / bc1) * self.m / denom


def train_trajectory(spec: LossSpec, hp: HyperParams, ds: Dataset,
                     cfg: Optional[OptimConfig] = None) -> Tuple[LinearModel, List[float]]:
    """Full-batch training from ω = 0; also returns the loss before every update and after the last"""
    cfg = cfg or OptimConfig()
    omega = np.zeros(ds.d)
    optimizer = AdamOptimizer(cfg)
    losses: List[float] = []

    for epoch in range(cfg.epochs + 1):
        value, gradient = loss_and_gradient(spec, hp, ds, omega)
        if not (math.isfinite(value) and np.all(np.isfinite(gradient))):
            raise DivergenceDetected("Loss became non-finite during training",
                                     epoch=epoch, spec=spec.name, **hp.to_dict())
        losses.append(value)
        if epoch < cfg.epochs:
            optimizer.step(omega, gradient)

    logger.debug("loss_lab_trained", spec=spec.name, epochs=cfg.epochs, final_loss=losses[-1])
    return LinearModel(omega=omega, n_train=ds.n, hyper=hp), losses


def train(spec: LossSpec, hp: HyperParams, ds: Dataset, cfg: Optional[OptimConfig] = None) -> LinearModel:
    return train_trajectory(spec, hp, ds, cfg)[0]


@dataclass(frozen=True)
class LossLabRow:
    spec: str
    alpha_l: float
    alpha_u: float
    lam: float
    oracle_error: float

    def to_dict(self) -> Dict[str, Any]:
        row = asdict(self)
        row["lambda"] = row.pop("lam")
        return row


def loss_grid_oracle_compare(ds: Dataset, specs: Sequence[LossSpec], grid: Sequence[Triple],
                             cfg: Optional[OptimConfig] = None, n_jobs: Optional[int] = 1) -> List[LossLabRow]:
    """Oracle-selected transductive error of every spec over (α_ℓ, α_u, λ) triples, one row per spec"""
    ds.require_truth()
    if not grid:
        raise ValidationError("the (alpha_l, alpha_u, lambda) grid is empty")
    tasks = [(spec, triple) for spec in specs for triple in grid]

    def evaluate(task) -> float:
        spec, (alpha_l, alpha_u, lam) = task
        try:
            model = train(spec, HyperParams(alpha_l, alpha_u, lam), ds, cfg)
        except DivergenceDetected:
            return math.inf
        return transductive_error(model, ds)

    errors = np.array(run_parallel(evaluate, tasks, n_jobs), dtype=float).reshape(len(specs), len(grid))

    rows = []
    for spec, spec_errors in zip(specs, errors):
        if np.all(np.isinf(spec_errors)):
            rows.append(LossLabRow(spec.name, math.nan, math.nan, math.nan, math.nan))
            continue
        best = int(np.argmin(spec_errors))
        alpha_l, alpha_u, lam = grid[best]
        rows.append(LossLabRow(spec.name, float(alpha_l), float(alpha_u), float(lam), float(spec_errors[best])))
        logger.info("loss_lab_oracle", spec=spec.name, oracle_error=float(spec_errors[best]))
    return rows
