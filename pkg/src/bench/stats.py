"""
Significance testing for benchmark tables
"""

from dataclasses import dataclass, asdict
from typing import Any, Dict, Sequence
import numpy as np
from scipy.stats import mannwhitneyu
from src.core.errors import InsufficientSamples

EXACT_LIMIT = 8


@dataclass(frozen=True)
class MannWhitneyResult:
    u1: float
    u2: float
    p_value: float
    method: str

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def mann_whitney(x: Sequence[float], y: Sequence[float]) -> MannWhitneyResult:
    """Two-sided Mann-Whitney U test.

    Exact distribution when both groups have fewer than 8 values and no ties, normal
    approximation with tie correction otherwise.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size == 0 or y.size == 0:
        raise InsufficientSamples("Both groups need at least one value", n1=int(x.size), n2=int(y.size))
    total = float(x.size * y.size)

    pooled = np.concatenate([x, y])
    if np.all(pooled == pooled[0]):
        return MannWhitneyResult(u1=total / 2.0, u2=total / 2.0, p_value=1.0, method="degenerate")

    has_ties = np.unique(pooled).size < pooled.size
    method = "exact" if x.size < EXACT_LIMIT and y.size < EXACT_LIMIT and not has_ties else "asymptotic"
    result = mannwhitneyu(x, y, alternative="two-sided", method=method, use_continuity=False)
    u1 = float(result.statistic)
    return MannWhitneyResult(u1=u1, u2=total - u1, p_value=float(min(1.0, result.pvalue)), method=method)
