"""
Performance Theory
Large-dimensional prediction of the QLDS score distribution and transductive error
"""

from dataclasses import dataclass, asdict
from enum import Enum
from typing import Any, Dict, Optional, Tuple
import numpy as np
from src.core.caching import gram_cache
from src.core.errors import (
    InsufficientSamples, NoConvergence, InvalidRegime, DegenerateTheory, ValidationError
)
from src.core.structured_logging import get_structured_logger
from src.data.dataset import Dataset, ClassCounts, class_counts
from src.data.synthetic import GmmSpec
from src.numerics.linalg import erf
from src.qlds.solver import HyperParams

FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAX_ITER = 10_000
KAPPA_FLOOR = 1e-14

# Class 1 carries label -1, class 2 carries +1
CLASS_SIGNS = np.array([-1.0, 1.0])

logger = get_structured_logger(__name__)


class TheoryVariant(str, Enum):
    """Form of the fixed point and score statistics"""
    CORRECTED = "corrected"
    APPENDIX = "appendix"
    MAIN_TEXT = "main_text"


class ProportionMode(str, Enum):
    """Source of the unlabeled class proportions"""
    MATCHED = "matched"
    TRUTH = "truth"


@dataclass(frozen=True)
class FixedPoint:
    delta: float
    theta: float
    kappa: Tuple[float, float]
    a: Tuple[float, float]
    d: Tuple[float, float]
    residual: float
    iterations: int
    variant: str

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class GramEstimate:
    """Estimate of the 2×2 matrix of class-mean inner products"""
    mtm: np.ndarray
    provenance: str = "estimated"

    def __post_init__(self):
        mtm = np.array(self.mtm, dtype=float)
        if mtm.shape != (2, 2):
            raise ValidationError(f"Class-mean Gram must be 2×2, got {mtm.shape}")
        mtm = 0.5 * (mtm + mtm.T)
        mtm.setflags(write=False)
        object.__setattr__(self, "mtm", mtm)

    def swapped(self) -> "GramEstimate":
        return GramEstimate(self.mtm[::-1, ::-1], self.provenance)

    def to_dict(self) -> Dict[str, Any]:
        return {"mtm": self.mtm.tolist(), "provenance": self.provenance}


@dataclass(frozen=True)
class TheoryStats:
    """Gaussian limit of the score: class means m1, m2, shared variance and predicted error"""
    m1: float
    m2: float
    sigma2: float
    eps_star: float
    variant: str = TheoryVariant.CORRECTED.value

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def project_psd(matrix: np.ndarray) -> np.ndarray:
    """Nearest positive semidefinite matrix in Frobenius norm"""
    symmetric = 0.5 * (matrix + matrix.T)
    eigenvalues, eigenvectors = np.linalg.eigh(symmetric)
    clipped = (eigenvectors * np.clip(eigenvalues, 0.0, None)) @ eigenvectors.T
    return 0.5 * (clipped + clipped.T)


def estimate_gram(ds: Dataset) -> GramEstimate:
    """Unbiased estimate of the class-mean Gram from labeled samples.

    Diagonal entries pair the means of two disjoint halves of a class (sizes ⌊n/2⌋ and ⌈n/2⌉),
    off-diagonal entries pair the two class means. The result is projected onto the PSD cone.
    """
    columns = [ds.x_labeled[:, ds.labels == sign] for sign in (-1, 1)]
    for j, block in enumerate(columns, start=1):
        if block.shape[1] < 2:
            raise InsufficientSamples(
                f"Class {j} needs at least two labeled samples, has {block.shape[1]}",
                class_index=j, n_labeled=int(block.shape[1])
            )

    means = [block.mean(axis=1) for block in columns]
    estimate = np.empty((2, 2))
    for j, block in enumerate(columns):
        half = block.shape[1] // 2
        estimate[j, j] = block[:, :half].mean(axis=1) @ block[:, half:].mean(axis=1)
    estimate[0, 1] = estimate[1, 0] = means[0] @ means[1]

    return GramEstimate(project_psd(estimate), provenance="estimated")


def exact_gram(spec: GmmSpec) -> GramEstimate:
    """Class-mean Gram of a synthetic mixture after removing the population mean"""
    sizes = np.array([spec.n_l1 + spec.n_u1, spec.n_l2 + spec.n_u2], dtype=float)
    offsets = CLASS_SIGNS * spec.mu_norm / 2.0
    centered = offsets - (sizes @ offsets) / sizes.sum()
    return GramEstimate(np.outer(centered, centered), provenance="exact")


def _kappa(counts: ClassCounts, hp: HyperParams, theta: float) -> np.ndarray:
    return (counts.c_l * hp.alpha_l / (1.0 + hp.alpha_l * theta)
            - counts.c_u * hp.alpha_u / (1.0 - hp.alpha_u * theta))


def _a(counts: ClassCounts, hp: HyperParams, theta: float) -> np.ndarray:
    return (counts.c_l * hp.alpha_l ** 2 / (1.0 + hp.alpha_l * theta) ** 2
            + counts.c_u * hp.alpha_u ** 2 / (1.0 - hp.alpha_u * theta) ** 2)


def solve_fixed_point(counts: ClassCounts, hp: HyperParams,
                      variant: TheoryVariant = TheoryVariant.CORRECTED) -> FixedPoint:
    """Iterate δ ← 1/(λ + κ₁ + κ₂) from δ = 1/λ.

    κ_j is evaluated at θ = c₀δ for the corrected variant and at θ = δ for the literal ones.
    """
    variant = TheoryVariant(variant)
    trace_scale = counts.c0 if variant is TheoryVariant.CORRECTED else 1.0

    delta = 1.0 / hp.lam
    for iteration in range(1, FIXED_POINT_MAX_ITER + 1):
        theta = trace_scale * delta
        if 1.0 - hp.alpha_u * theta <= 0:
            raise InvalidRegime("1 - alpha_u * theta left the positive half-line",
                                delta=delta, iteration=iteration, **hp.to_dict())
        total = hp.lam + float(np.sum(_kappa(counts, hp, theta)))
        if total <= 0:
            raise InvalidRegime("fixed-point denominator is not positive",
                                delta=delta, iteration=iteration, **hp.to_dict())
        updated = 1.0 / total
        step = abs(updated - delta)
        delta = updated
        if step <= FIXED_POINT_TOL * min(1.0, delta):
            break
    else:
        raise NoConvergence("Fixed-point iteration did not converge",
                            iterations=FIXED_POINT_MAX_ITER, delta=delta, **hp.to_dict())

    theta = trace_scale * delta
    if 1.0 - hp.alpha_u * theta <= 0:
        raise InvalidRegime("1 - alpha_u * theta left the positive half-line", delta=delta, **hp.to_dict())

    kappa = _kappa(counts, hp, theta)
    a = _a(counts, hp, theta)
    c_u_total = float(np.sum(counts.c_u))
    scale = -delta ** 2 / (1.0 - hp.alpha_u * theta) ** 2 * counts.c0 * c_u_total

    if variant is TheoryVariant.CORRECTED:
        amplification = 1.0 - counts.c0 * delta ** 2 * float(np.sum(a))
        if amplification <= 0:
            raise InvalidRegime("variance amplification guard failed", amplification=amplification,
                                delta=delta, **hp.to_dict())
        d = np.full(2, scale / amplification)
    else:
        amplification_j = 1.0 - counts.c0 * delta ** 2 * a
        if np.any(amplification_j <= 0):
            raise InvalidRegime("per-class variance amplification guard failed",
                                amplification=amplification_j.tolist(), delta=delta, **hp.to_dict())
        d = scale / amplification_j

    residual = abs(delta * (hp.lam + float(np.sum(kappa))) - 1.0)
    return FixedPoint(
        delta=float(delta),
        theta=float(theta),
        kappa=(float(kappa[0]), float(kappa[1])),
        a=(float(a[0]), float(a[1])),
        d=(float(d[0]), float(d[1])),
        residual=float(residual),
        iterations=iteration,
        variant=variant.value,
    )


def _error_from_moments(m1: float, m2: float, sigma2: float) -> float:
    if not sigma2 > 0:
        raise DegenerateTheory("score variance must be positive", sigma2=sigma2)
    return float(0.5 * (1.0 - erf(abs(m1 - m2) / (2.0 * np.sqrt(2.0) * np.sqrt(sigma2)))))


def theoretical_error(stats: TheoryStats) -> float:
    """½(1 − erf(|m₁ − m₂| / (2√2σ)))"""
    return _error_from_moments(stats.m1, stats.m2, stats.sigma2)


def _corrected_moments(fp: FixedPoint, counts: ClassCounts, mtm: np.ndarray,
                       hp: HyperParams) -> Tuple[float, float, float]:
    delta, theta = fp.delta, fp.theta
    kappa, a = np.asarray(fp.kappa), np.asarray(fp.a)
    c0 = counts.c0
    identity = np.eye(2)

    p = identity / delta + mtm * kappa[np.newaxis, :]
    if abs(np.linalg.det(p)) < 1e-14 * max(1.0, np.max(np.abs(p))) ** 2:
        raise DegenerateTheory("resolvent matrix of the mean statistics is singular")
    k = np.linalg.solve(p, mtm)
    k = 0.5 * (k + k.T)

    w = counts.c_l * CLASS_SIGNS
    labeled_gain = 1.0 + hp.alpha_l * theta
    unlabeled_gain = 1.0 - hp.alpha_u * theta

    means = (w @ k) / (labeled_gain * unlabeled_gain)

    cdd = c0 * delta ** 2
    spread = np.linalg.solve(p, (identity + cdd * mtm * a[np.newaxis, :]) @ k)
    numerator = (
        float(np.sum(counts.c_l)) * cdd
        + float(w @ spread @ w)
        - 2.0 * hp.alpha_l * cdd * float(w @ k @ w) / labeled_gain
    )
    amplification = 1.0 - cdd * float(np.sum(a))
    sigma2 = numerator / (labeled_gain ** 2 * unlabeled_gain ** 2 * amplification)
    return float(means[0]), float(means[1]), float(sigma2)


def _literal_moments(fp: FixedPoint, counts: ClassCounts, mtm: np.ndarray,
                     hp: HyperParams, variant: TheoryVariant) -> Tuple[float, float, float]:
    delta = fp.delta
    kappa, a, d = np.asarray(fp.kappa), np.asarray(fp.a), np.asarray(fp.d)
    if np.any(np.abs(kappa) < KAPPA_FLOOR):
        raise DegenerateTheory("kappa vanishes for a class", kappa=kappa.tolist())

    c_l = counts.c_l
    c_u_total = float(np.sum(counts.c_u))
    labeled_gain = 1.0 + hp.alpha_l * delta
    unlabeled_gain = 1.0 - hp.alpha_u * delta

    try:
        m_matrix = np.linalg.inv(np.diag(1.0 / kappa) + delta * mtm)
    except np.linalg.LinAlgError as e:
        raise DegenerateTheory("mean statistics matrix is singular") from e

    if variant is TheoryVariant.APPENDIX:
        coefficient = -c_u_total / unlabeled_gain + float(a @ d)
    else:
        coefficient = -(c_u_total / unlabeled_gain + float(a @ d))
    g_matrix = coefficient * delta * mtm

    projected = CLASS_SIGNS @ np.diag(c_l) @ np.diag(1.0 / kappa) @ m_matrix
    means = CLASS_SIGNS * (c_l + projected) / (kappa * unlabeled_gain * labeled_gain)

    s = c_l / (kappa * labeled_gain)
    covariance = np.diag(s) @ m_matrix @ g_matrix @ m_matrix @ np.diag(s) + np.diag(d * c_l)
    sigma2 = float(CLASS_SIGNS @ covariance @ CLASS_SIGNS)
    return float(means[0]), float(means[1]), sigma2


def theory_statistics(fp: FixedPoint, counts: ClassCounts, gram: GramEstimate,
                      hp: HyperParams) -> TheoryStats:
    """Class-conditional score means, shared variance and predicted error"""
    variant = TheoryVariant(fp.variant)
    if variant is TheoryVariant.CORRECTED:
        m1, m2, sigma2 = _corrected_moments(fp, counts, gram.mtm, hp)
    else:
        m1, m2, sigma2 = _literal_moments(fp, counts, gram.mtm, hp, variant)

    if not np.isfinite(sigma2) or sigma2 <= 0:
        raise DegenerateTheory("predicted score variance is not positive", sigma2=sigma2, variant=variant.value)
    return TheoryStats(m1=m1, m2=m2, sigma2=sigma2, eps_star=_error_from_moments(m1, m2, sigma2),
                       variant=variant.value)


def cached_gram(ds: Dataset) -> GramEstimate:
    """estimate_gram memoized by dataset content"""
    return gram_cache.get_or_compute(("gram", ds.fingerprint), lambda: estimate_gram(ds))


def predict_error(ds: Dataset, hp: HyperParams,
                  proportion_mode: ProportionMode = ProportionMode.MATCHED,
                  variant: TheoryVariant = TheoryVariant.CORRECTED,
                  gram: Optional[GramEstimate] = None,
                  counts: Optional[ClassCounts] = None) -> TheoryStats:
    """Predicted score statistics of QLDS fitted on ds with hp"""
    if gram is None:
        gram = cached_gram(ds)
    if counts is None:
        counts = class_counts(ds, ProportionMode(proportion_mode) is ProportionMode.MATCHED)
    fp = solve_fixed_point(counts, hp, variant)
    stats = theory_statistics(fp, counts, gram, hp)
    logger.debug("theory_evaluated", alpha_l=hp.alpha_l, alpha_u=hp.alpha_u, lam=hp.lam,
                 delta=fp.delta, eps_star=stats.eps_star, variant=stats.variant)
    return stats
