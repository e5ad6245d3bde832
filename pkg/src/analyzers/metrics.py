"""
Rank and mass statistics over attribution records: top-t% sets, IoU, random-baseline IoU,
center of mass, spread curves and positional histograms.

Attribution mass is |score| by default. With signed=True words are ranked by their signed
score and only positive scores carry mass.
"""

from dataclasses import dataclass
from typing import FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from ..attribution.records import AttributionRecord
from ..errors import RejectedInputError
from ..utils.logger import app_logger as logger

# Relative slack when comparing cumulative mass against the target share
COVERAGE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class TopSet:
    threshold: float
    words: Tuple[int, ...]
    covered: float

    def as_set(self) -> FrozenSet[int]:
        return frozenset(self.words)

    def __len__(self) -> int:
        return len(self.words)


def attribution_mass(record: AttributionRecord, signed: bool = False) -> np.ndarray:
    if signed:
        return np.clip(record.score, 0.0, None)
    return np.abs(record.score)


def ranking(record: AttributionRecord, signed: bool = False) -> np.ndarray:
    """Positions of the record's words from most to least important.

    Ties fall to the more recent word, then to the smaller word_index.
    """
    key = record.score if signed else np.abs(record.score)
    return np.lexsort((record.word_index, record.distance, -key))


def top_set(record: AttributionRecord, threshold: float, signed: bool = False) -> TopSet:
    """Smallest ranked prefix whose mass reaches threshold% of the total.

    Args:
        record: Attribution record
        threshold: Percentage t in (0, 100]
        signed: Rank by signed score instead of magnitude

    Returns:
        TopSet in rank order
    """
    if not 0 < threshold <= 100:
        raise RejectedInputError(f"Threshold must lie in (0, 100], got {threshold}")
    mass = attribution_mass(record, signed)
    total = float(mass.sum())
    if total <= 0:
        logger.warning(f"Record {record.target.sort_key()} has no attribution mass; top set is empty")
        return TopSet(threshold, (), 0.0)
    order = ranking(record, signed)
    cumulative = np.cumsum(mass[order])
    needed = total * threshold / 100.0
    count = int(np.searchsorted(cumulative, needed * (1 - COVERAGE_TOLERANCE), side="left")) + 1
    count = min(count, int(np.count_nonzero(mass)))
    chosen = order[:count]
    return TopSet(
        threshold,
        tuple(int(w) for w in record.word_index[chosen]),
        float(cumulative[count - 1] / total)
    )


def iou(set_a, set_b) -> float:
    """Jaccard index of two word-instance sets; 0 with a warning when both are empty."""
    a, b = frozenset(set_a), frozenset(set_b)
    union = a | b
    if not union:
        logger.warning("IoU of two empty sets is undefined; reporting 0")
        return 0.0
    return len(a & b) / len(union)


def random_baseline_samples(n: int, size_a: int, size_b: int, draws: int = 100, seed: int = 0) -> np.ndarray:
    """IoU of size-matched uniform random subsets of range(n), one value per draw."""
    if not (0 <= size_a <= n and 0 <= size_b <= n):
        raise RejectedInputError(f"Set sizes {size_a}, {size_b} exceed context size {n}")
    rng = np.random.default_rng(seed)
    samples = np.empty(draws)
    for i in range(draws):
        a = rng.choice(n, size=size_a, replace=False)
        b = rng.choice(n, size=size_b, replace=False)
        union = size_a + size_b - np.intersect1d(a, b, assume_unique=True).size
        samples[i] = 0.0 if union == 0 else (size_a + size_b - union) / union
    return samples


def random_baseline_iou(n: int, size_a: int, size_b: int, draws: int = 100, seed: int = 0) -> float:
    """Monte-Carlo mean IoU of random word sets matching the given sizes."""
    return float(random_baseline_samples(n, size_a, size_b, draws, seed).mean())


def expected_random_iou(n: int, size_a: int, size_b: int) -> float:
    """Exact expectation of the random-baseline IoU (hypergeometric overlap)."""
    if size_a + size_b == 0:
        return 0.0
    overlap = stats.hypergeom(n, size_a, size_b)
    k = np.arange(max(0, size_a + size_b - n), min(size_a, size_b) + 1)
    return float(np.sum(overlap.pmf(k) * k / (size_a + size_b - k)))


def center_of_mass(
    record: AttributionRecord,
    mode: str = "all",
    threshold: float = 60,
    origin: int = 0,
    signed: bool = False
) -> Optional[float]:
    """Mass-weighted mean distance from the most recent word.

    Args:
        record: Attribution record
        mode: "all" over every word, "top" over the top-threshold% set only
        threshold: Threshold for mode "top"
        origin: Distance assigned to the most recent word (0 or 1)
        signed: Use positive signed scores as mass

    Returns:
        CoM, or None when there is no mass
    """
    mass = attribution_mass(record, signed)
    distance = record.distance.astype(np.float64) + origin
    if mode == "top":
        keep = np.isin(record.word_index, list(top_set(record, threshold, signed).words))
        mass, distance = mass[keep], distance[keep]
    elif mode != "all":
        raise RejectedInputError(f"Unknown CoM mode {mode!r}")
    total = float(mass.sum())
    if total <= 0:
        return None
    return float(np.dot(mass, distance) / total)


def set_center_of_mass(record: AttributionRecord, words, origin: int = 0, signed: bool = False) -> Optional[float]:
    """CoM restricted to an explicit word set (used for the BA/NWP intersection)."""
    keep = np.isin(record.word_index, list(words))
    mass = attribution_mass(record, signed)[keep]
    total = float(mass.sum())
    if total <= 0:
        return None
    return float(np.dot(mass, record.distance[keep] + origin) / total)


def intersection_center_of_mass(
    first: AttributionRecord,
    second: AttributionRecord,
    words,
    origin: int = 0,
    signed: bool = False
) -> Optional[float]:
    """CoM of a shared word set, each word weighted by its summed normalized mass in both records."""
    words = sorted(words)
    if not words:
        return None
    weights = np.zeros(len(words))
    distances = None
    for record in (first, second):
        mass = attribution_mass(record, signed)
        total = float(mass.sum())
        positions = np.searchsorted(record.word_index, words)
        if total > 0:
            weights += mass[positions] / total
        distances = record.distance[positions] if distances is None else distances
    if weights.sum() <= 0:
        return None
    return float(np.dot(weights, distances + origin) / weights.sum())


@dataclass(frozen=True)
class SpreadCurve:
    thresholds: np.ndarray
    counts: np.ndarray
    aucs: np.ndarray

    @property
    def mean_counts(self) -> np.ndarray:
        return self.counts.mean(axis=0)

    @property
    def sem_counts(self) -> np.ndarray:
        return standard_error(self.counts)

    @property
    def auc(self) -> float:
        return float(self.aucs.mean())


def standard_error(values: np.ndarray) -> np.ndarray:
    """Standard error of the mean along axis 0 (0 for fewer than two samples)."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] < 2:
        return np.zeros(values.shape[1:]) if values.ndim > 1 else np.float64(0.0)
    return stats.sem(values, axis=0)


def curve_auc(thresholds: Sequence[float], counts: np.ndarray) -> np.ndarray:
    """Trapezoid area under count(t) with t rescaled to [0, 1]."""
    x = np.asarray(thresholds, dtype=np.float64) / 100.0
    y = np.asarray(counts, dtype=np.float64)
    return np.sum((y[..., 1:] + y[..., :-1]) * np.diff(x) / 2.0, axis=-1)


def spread_curve(records: Sequence[AttributionRecord], thresholds: Sequence[float], signed: bool = False) -> SpreadCurve:
    """Unique-word counts needed to reach each threshold, per record, plus their AUCs.

    Records without mass are left out.
    """
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(thresholds) <= 0):
        raise RejectedInputError("Spread thresholds must be strictly ascending")
    rows = []
    for record in records:
        if attribution_mass(record, signed).sum() <= 0:
            logger.warning(f"Record {record.target.sort_key()} has no attribution mass; left out of spread")
            continue
        rows.append([len(top_set(record, t, signed)) for t in thresholds])
    counts = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(thresholds))
    return SpreadCurve(thresholds, counts, curve_auc(thresholds, counts))


def distance_histogram(distances: Sequence[int], bin_width: int, n_bins: Optional[int] = None) -> np.ndarray:
    """Proportion of distances per bin [k*w, (k+1)*w)."""
    if bin_width < 1:
        raise RejectedInputError(f"Bin width must be >= 1, got {bin_width}")
    distances = np.asarray(distances, dtype=np.int64)
    bins = distances // bin_width
    size = n_bins if n_bins is not None else (int(bins.max()) + 1 if bins.size else 1)
    counts = np.bincount(bins, minlength=size)[:size].astype(np.float64)
    total = counts.sum()
    return counts / total if total > 0 else counts


def positional_histogram(
    records: Sequence[AttributionRecord],
    threshold: float,
    bin_width: int = 16,
    n_bins: Optional[int] = None,
    signed: bool = False
) -> np.ndarray:
    """Share of top-threshold% words per distance bin, pooled over records."""
    distances: List[int] = []
    for record in records:
        chosen = top_set(record, threshold, signed).as_set()
        distances.extend(int(d) for w, d in zip(record.word_index, record.distance) if int(w) in chosen)
    if not distances:
        logger.warning("No top-attributed words to place in the positional histogram")
    return distance_histogram(distances, bin_width, n_bins)
