"""
Paired significance tests with Benjamini-Hochberg correction.
"""

from dataclasses import asdict, dataclass
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats
from statsmodels.stats.multitest import multipletests

from ..errors import RejectedInputError
from ..utils.logger import app_logger as logger

STATS_COLUMNS = ["family", "comparison", "n", "statistic", "p_value", "p_adjusted", "reject"]


@dataclass(frozen=True)
class PairedComparison:
    name: str
    first: np.ndarray
    second: np.ndarray


@dataclass(frozen=True)
class ComparisonResult:
    family: str
    comparison: str
    n: int
    statistic: float
    p_value: float
    p_adjusted: float
    reject: bool


def paired_ttest(first: Sequence[float], second: Sequence[float]) -> Tuple[float, float]:
    """Two-sided paired t-test; zero-variance differences give (0, 1) with a warning."""
    a = np.asarray(first, dtype=np.float64)
    b = np.asarray(second, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise RejectedInputError("Paired samples must be 1-D and of equal length")
    if a.size < 2:
        raise RejectedInputError("A paired t-test needs at least 2 pairs")
    differences = a - b
    if np.ptp(differences) == 0:
        logger.warning("Paired differences have zero variance; p-value set to 1")
        return 0.0, 1.0
    result = stats.ttest_rel(a, b)
    return float(result.statistic), float(result.pvalue)


def benjamini_hochberg(p_values: Sequence[float], alpha: float = 0.05) -> Tuple[np.ndarray, np.ndarray]:
    """BH step-up procedure.

    Returns:
        Tuple of (reject flags, adjusted p-values)
    """
    p_values = np.asarray(p_values, dtype=np.float64)
    if p_values.size == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    reject, adjusted, _, _ = multipletests(p_values, alpha=alpha, method="fdr_bh")
    return reject, adjusted


def paired_test_bh(comparisons: Sequence[PairedComparison], alpha: float = 0.05, family: str = "") -> List[ComparisonResult]:
    """Paired t-tests for a family of comparisons, BH-corrected together.

    Args:
        comparisons: Named sample pairs
        alpha: False discovery rate
        family: Label stored on every result

    Returns:
        One ComparisonResult per comparison, in input order
    """
    tests = [paired_ttest(c.first, c.second) for c in comparisons]
    reject, adjusted = benjamini_hochberg([p for _, p in tests], alpha)
    return [
        ComparisonResult(family, c.name, int(len(c.first)), t, p, float(adj), bool(rej))
        for c, (t, p), adj, rej in zip(comparisons, tests, adjusted, reject)
    ]


def results_frame(results: Sequence[ComparisonResult]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in results], columns=STATS_COLUMNS)
