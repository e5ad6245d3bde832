"""
Nested cross-validated voxelwise encoding models.

Outer folds are contiguous blocks of design rows (sklearn KFold without shuffling). Within each
outer training split, inner folds pick one lambda shared by all voxels (best mean inner Pearson r,
ties resolved toward the larger lambda). The outer model is refit on the whole training split
with train-only z-scoring of design columns and responses, then scored on the held-out rows.
"""

import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.model_selection import KFold

from ..errors import DependencyError, InternalConsistencyError, RejectedInputError
from ..utils.file_utils import atomic_write_csv, load_container, save_container
from ..utils.logger import app_logger as logger
from .ridge import Standardizer, pearson_per_voxel, ridge_path

ENCODING_KIND = "encoding_model"
RESPONSE_KIND = "response_matrix"


@dataclass(frozen=True)
class ResponseMatrix:
    values: np.ndarray
    row_keys: np.ndarray
    subject: int = 0

    def __post_init__(self):
        if self.values.ndim != 2 or self.row_keys.shape != (self.values.shape[0], 2):
            raise InternalConsistencyError("Response values and row keys disagree")
        if not np.isfinite(self.values).all():
            raise RejectedInputError("Response matrix contains non-finite values")

    @property
    def n_voxels(self) -> int:
        return self.values.shape[1]

    def align(self, row_keys: np.ndarray) -> np.ndarray:
        """Response rows for the given (run, tr) keys, in that order."""
        index = {(int(r), int(t)): i for i, (r, t) in enumerate(self.row_keys)}
        missing = [(int(r), int(t)) for r, t in row_keys if (int(r), int(t)) not in index]
        if missing:
            raise InternalConsistencyError(
                f"Responses for subject {self.subject} lack {len(missing)} design TRs, e.g. {missing[0]}"
            )
        return self.values[[index[(int(r), int(t))] for r, t in row_keys]]


def save_responses(path: str, responses: ResponseMatrix) -> None:
    save_container(path, RESPONSE_KIND, {"subject": responses.subject, "n_voxels": responses.n_voxels},
                   {"row_keys": responses.row_keys, "values": responses.values})


def load_responses(path: str) -> ResponseMatrix:
    if not os.path.isfile(path):
        raise DependencyError(path, "synth")
    header, arrays = load_container(path, RESPONSE_KIND)
    return ResponseMatrix(arrays["values"], arrays["row_keys"].astype(np.int64), int(header["subject"]))


@dataclass(frozen=True)
class FoldSpec:
    """Outer test-row sets plus the inner fold count used on each training split."""
    outer: Tuple[np.ndarray, ...]
    inner_folds: int

    def validate(self, n_rows: int) -> None:
        seen = np.concatenate(self.outer) if self.outer else np.array([], dtype=np.int64)
        if seen.size != n_rows or not np.array_equal(np.sort(seen), np.arange(n_rows)):
            raise RejectedInputError("Outer folds must partition all design rows")

    def train_rows(self, fold: int) -> np.ndarray:
        """Rows of the other outer folds, concatenated in fold order (inner folds cut this order)."""
        return np.concatenate([rows for j, rows in enumerate(self.outer) if j != fold])


def make_folds(n_rows: int, outer_folds: int = 4, inner_folds: int = 3) -> FoldSpec:
    if n_rows < outer_folds:
        raise RejectedInputError(f"{n_rows} rows cannot form {outer_folds} outer folds")
    splitter = KFold(n_splits=outer_folds, shuffle=False)
    return FoldSpec(tuple(test for _, test in splitter.split(np.arange(n_rows))), inner_folds)


@dataclass(frozen=True)
class DelayHead:
    """Affine projection of one delayed TR embedding: ((e - mean) / scale) @ weights."""
    mean: np.ndarray
    scale: np.ndarray
    weights: np.ndarray

    def __call__(self, embedding: np.ndarray) -> np.ndarray:
        return ((embedding - self.mean) / self.scale) @ self.weights


def decompose_weights(weights: np.ndarray, delays: int) -> List[np.ndarray]:
    """Split a (D*H, V) weight matrix into D row blocks of shape (H, V).

    np.concatenate of the blocks gives back the input exactly.
    """
    if weights.shape[0] % delays != 0:
        raise RejectedInputError(f"{weights.shape[0]} rows do not split into {delays} delays")
    hidden = weights.shape[0] // delays
    return [weights[d * hidden:(d + 1) * hidden] for d in range(delays)]


@dataclass(frozen=True)
class FoldModel:
    """Encoding model fitted on one outer training split."""
    fold: int
    test_rows: np.ndarray
    lam: float
    x_norm: Standardizer
    y_norm: Standardizer
    weights: np.ndarray
    delays: int

    @property
    def heads(self) -> List[DelayHead]:
        hidden = self.weights.shape[0] // self.delays
        blocks = decompose_weights(self.weights, self.delays)
        return [
            DelayHead(
                self.x_norm.mean[d * hidden:(d + 1) * hidden],
                self.x_norm.scale[d * hidden:(d + 1) * hidden],
                blocks[d]
            )
            for d in range(self.delays)
        ]

    def predict(self, rows: np.ndarray) -> np.ndarray:
        """Standardized-space predictions: the heads summed in delay order."""
        rows = np.atleast_2d(rows)
        hidden = self.weights.shape[0] // self.delays
        total = None
        for d, head in enumerate(self.heads):
            part = head(rows[:, d * hidden:(d + 1) * hidden])
            total = part if total is None else total + part
        return total


@dataclass(frozen=True)
class AlignmentScore:
    layer: Optional[int]
    subject: int
    r: np.ndarray

    @property
    def mean_r(self) -> float:
        return float(np.mean(self.r))


@dataclass(frozen=True)
class EncodingModel:
    layer: Optional[int]
    subject: int
    delays: int
    folds: Tuple[FoldModel, ...]

    @property
    def lambdas(self) -> List[float]:
        return [fold.lam for fold in self.folds]

    def fold_for_row(self, row: int) -> FoldModel:
        for fold in self.folds:
            if row in fold.test_rows:
                return fold
        raise RejectedInputError(f"Design row {row} is in no scored outer fold")

    def heldout_predictions(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Held-out predictions in response units for every scored row.

        Returns:
            Tuple of (row indices, predictions)
        """
        rows = np.concatenate([fold.test_rows for fold in self.folds])
        preds = np.concatenate([
            fold.y_norm.inverse(fold.predict(X[fold.test_rows])) for fold in self.folds
        ])
        order = np.argsort(rows, kind="stable")
        return rows[order], preds[order]


def _inner_scores(X: np.ndarray, Y: np.ndarray, lambdas: Sequence[float], inner_folds: int) -> np.ndarray:
    n_rows = X.shape[0]
    splits = min(inner_folds, n_rows // 2)
    if splits < 2:
        raise RejectedInputError(f"Only {n_rows} training rows; inner cross-validation needs at least 4")
    scores = np.zeros(len(lambdas))
    for train, test in KFold(n_splits=splits, shuffle=False).split(np.arange(n_rows)):
        x_norm, y_norm = Standardizer.fit(X[train]), Standardizer.fit(Y[train])
        path = ridge_path(x_norm.transform(X[train]), y_norm.transform(Y[train]), lambdas)
        x_test, y_test = x_norm.transform(X[test]), y_norm.transform(Y[test])
        for i in range(len(lambdas)):
            scores[i] += pearson_per_voxel(x_test @ path[i], y_test).mean()
    return scores / splits


def select_lambda(scores: np.ndarray, lambdas: Sequence[float]) -> float:
    """Best mean score; ties go to the larger lambda."""
    best = max(range(len(lambdas)), key=lambda i: (scores[i], lambdas[i]))
    return float(lambdas[best])


def fit_outer_fold(
    X_train: np.ndarray,
    Y_train: np.ndarray,
    lambda_grid: Sequence[float],
    inner_folds: int
) -> Tuple[float, Standardizer, Standardizer, np.ndarray]:
    """Choose lambda on inner folds and refit on the full training split.

    Only training rows enter this function, which is what keeps test rows out of the fit.

    Returns:
        Tuple of (lambda, design standardizer, response standardizer, weights (D*H, V))
    """
    if len(lambda_grid) == 0:
        raise RejectedInputError("lambda grid must not be empty")
    lam = select_lambda(_inner_scores(X_train, Y_train, lambda_grid, inner_folds), list(lambda_grid))
    x_norm, y_norm = Standardizer.fit(X_train), Standardizer.fit(Y_train)
    weights = ridge_path(x_norm.transform(X_train), y_norm.transform(Y_train), [lam])[0]
    return lam, x_norm, y_norm, weights


def nested_cv(
    X: np.ndarray,
    Y: np.ndarray,
    folds: FoldSpec,
    lambda_grid: Sequence[float],
    delays: int = 1,
    layer: Optional[int] = None,
    subject: int = 0
) -> Tuple[EncodingModel, AlignmentScore]:
    """Fit one encoding model per outer fold and score pooled held-out predictions.

    Args:
        X: (K, D*H) design values
        Y: (K, V) aligned responses
        folds: Outer/inner fold layout
        lambda_grid: Candidate lambdas
        delays: Delay depth D of X
        layer: Layer id recorded on the outputs
        subject: Subject id recorded on the outputs

    Returns:
        Tuple of (EncodingModel, AlignmentScore over held-out rows)
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[0] != Y.shape[0]:
        raise RejectedInputError(f"Design has {X.shape[0]} rows but responses have {Y.shape[0]}")
    folds.validate(X.shape[0])

    fold_models = []
    for i, test_rows in enumerate(folds.outer):
        if len(test_rows) < 2:
            logger.warning(f"Outer fold {i} has {len(test_rows)} test rows; Pearson r is undefined, fold skipped")
            continue
        train_rows = folds.train_rows(i)
        lam, x_norm, y_norm, weights = fit_outer_fold(X[train_rows], Y[train_rows], lambda_grid, folds.inner_folds)
        logger.debug(f"layer {layer} subject {subject} fold {i}: lambda={lam:g}")
        fold_models.append(FoldModel(i, np.asarray(test_rows), lam, x_norm, y_norm, weights, delays))
    if not fold_models:
        raise RejectedInputError("Every outer fold was skipped; not enough design rows")

    model = EncodingModel(layer, subject, delays, tuple(fold_models))
    rows, predictions = model.heldout_predictions(X)
    score = AlignmentScore(layer, subject, pearson_per_voxel(predictions, Y[rows]))
    logger.info(f"Layer {layer}, subject {subject}: mean held-out r = {score.mean_r:.4f}")
    return model, score


def save_encoding_model(path: str, model: EncodingModel) -> None:
    header = {
        "layer": model.layer,
        "subject": model.subject,
        "delays": model.delays,
        "folds": [{"fold": f.fold, "lambda": f.lam} for f in model.folds],
    }
    arrays: Dict[str, np.ndarray] = {}
    for f in model.folds:
        prefix = f"fold{f.fold}."
        arrays[prefix + "test_rows"] = f.test_rows.astype(np.int64)
        arrays[prefix + "x_mean"] = f.x_norm.mean
        arrays[prefix + "x_scale"] = f.x_norm.scale
        arrays[prefix + "y_mean"] = f.y_norm.mean
        arrays[prefix + "y_scale"] = f.y_norm.scale
        arrays[prefix + "weights"] = f.weights
    save_container(path, ENCODING_KIND, header, arrays)


def load_encoding_model(path: str) -> EncodingModel:
    if not os.path.isfile(path):
        raise DependencyError(path, "fit")
    header, arrays = load_container(path, ENCODING_KIND)
    folds = []
    for entry in header["folds"]:
        prefix = f"fold{entry['fold']}."
        folds.append(FoldModel(
            fold=int(entry["fold"]),
            test_rows=arrays[prefix + "test_rows"],
            lam=float(entry["lambda"]),
            x_norm=Standardizer(arrays[prefix + "x_mean"], arrays[prefix + "x_scale"]),
            y_norm=Standardizer(arrays[prefix + "y_mean"], arrays[prefix + "y_scale"]),
            weights=arrays[prefix + "weights"],
            delays=int(header["delays"])
        ))
    return EncodingModel(header["layer"], int(header["subject"]), int(header["delays"]), tuple(folds))


def alignment_frame(scores: Sequence[AlignmentScore]) -> pd.DataFrame:
    """Long table with columns (layer, subject, voxel, r)."""
    rows = [
        {"layer": s.layer, "subject": s.subject, "voxel": v, "r": float(r)}
        for s in scores
        for v, r in enumerate(s.r)
    ]
    return pd.DataFrame(rows, columns=["layer", "subject", "voxel", "r"])


def write_alignment_scores(path: str, scores: Sequence[AlignmentScore]) -> None:
    atomic_write_csv(path, alignment_frame(scores))


def read_alignment_scores(path: str) -> List[AlignmentScore]:
    if not os.path.isfile(path):
        raise DependencyError(path, "fit")
    frame = pd.read_csv(path)
    scores = []
    for (layer, subject), group in frame.groupby(["layer", "subject"], sort=True):
        group = group.sort_values("voxel")
        scores.append(AlignmentScore(int(layer), int(subject), group["r"].to_numpy(dtype=np.float64)))
    return scores
