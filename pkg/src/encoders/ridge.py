"""
Closed-form ridge regression and voxelwise Pearson scoring.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from ..errors import NumericalError, RejectedInputError


@dataclass(frozen=True)
class Standardizer:
    """Column z-scoring with statistics from training rows only."""
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "Standardizer":
        mean = values.mean(axis=0)
        scale = values.std(axis=0)
        # constant columns pass through centred
        scale = np.where(scale > 0, scale, 1.0)
        return cls(mean, scale)

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.scale

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.scale + self.mean


def _check_rows(X: np.ndarray, Y: np.ndarray) -> None:
    if X.ndim != 2 or Y.ndim != 2:
        raise RejectedInputError(f"X and Y must be 2-D, got {X.shape} and {Y.shape}")
    if X.shape[0] != Y.shape[0]:
        raise RejectedInputError(f"Row counts differ: X has {X.shape[0]}, Y has {Y.shape[0]}")
    if X.shape[0] == 0:
        raise RejectedInputError("Cannot fit ridge on zero rows")


def ridge_path(X: np.ndarray, Y: np.ndarray, lambdas: Sequence[float]) -> np.ndarray:
    """Ridge weights for several lambdas from one thin SVD of X.

    W(lambda) = V diag(s / (s^2 + lambda)) U^T Y

    Args:
        X: (n, p) design rows
        Y: (n, v) responses
        lambdas: Regularization strengths, each >= 0

    Returns:
        (len(lambdas), p, v) weights
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    _check_rows(X, Y)
    lambdas = [float(lam) for lam in lambdas]
    if any(lam < 0 for lam in lambdas):
        raise RejectedInputError("lambda must be >= 0")

    U, s, Vt = linalg.svd(X, full_matrices=False, lapack_driver="gesvd")
    UtY = U.T @ Y
    out = np.empty((len(lambdas), X.shape[1], Y.shape[1]))
    for i, lam in enumerate(lambdas):
        if lam == 0.0:
            tolerance = max(X.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
            if s.size < X.shape[1] or s.size == 0 or s[-1] <= tolerance:
                condition = float(s[0] / s[-1]) if s.size and s[-1] > 0 else float("inf")
                raise NumericalError(
                    f"Ridge system is singular at lambda=0 (rank-deficient X, condition estimate {condition:.3g})",
                    condition_estimate=condition
                )
            factors = 1.0 / s
        else:
            factors = s / (s * s + lam)
        out[i] = Vt.T @ (factors[:, None] * UtY)
    return out


def fit_ridge(X: np.ndarray, Y: np.ndarray, lam: float) -> np.ndarray:
    """argmin ||XW - Y||^2 + lam ||W||^2 in closed form, shape (p, v)."""
    return ridge_path(X, Y, [lam])[0]


def pearson_per_voxel(predicted: np.ndarray, actual: np.ndarray) -> np.ndarray:
    """Column-wise Pearson r; a constant column on either side gives r = 0.

    Args:
        predicted: (n, v) predictions
        actual: (n, v) observations

    Returns:
        (v,) correlations in [-1, 1]
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.ndim == 1:
        predicted, actual = predicted[:, None], actual[:, None]
    if predicted.shape != actual.shape:
        raise RejectedInputError(f"Shapes differ: {predicted.shape} vs {actual.shape}")
    if predicted.shape[0] < 2:
        raise RejectedInputError("Pearson correlation needs at least 2 rows")
    p = predicted - predicted.mean(axis=0)
    a = actual - actual.mean(axis=0)
    p_norm = np.sqrt((p * p).sum(axis=0))
    a_norm = np.sqrt((a * a).sum(axis=0))
    n = predicted.shape[0]
    # rounding leaves ~eps residue after centring a constant column
    degenerate = (
        (p_norm <= 1e-12 * np.sqrt(n) * np.abs(predicted).max(axis=0))
        | (a_norm <= 1e-12 * np.sqrt(n) * np.abs(actual).max(axis=0))
    )
    numerator = (p * a).sum(axis=0)
    denominator = p_norm * a_norm
    r = np.divide(numerator, denominator, out=np.zeros_like(numerator),
                  where=~degenerate & (denominator > 0))
    return np.clip(r, -1.0, 1.0)
