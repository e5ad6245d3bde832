"""
Metrics report: turns attribution records, alignment scores and masking results into the CSV
tables and JSON summary written by the analyze, mask and report stages.

Table schemas (one row per line, empty layer/subject on NWP-only rows):

    iou.csv        method, layer, subject, threshold, iou_mean, iou_sem, random_mean,
                   random_sem, n_contexts
    com.csv        task (ba|nwp|both), method, layer, subject, mode, threshold, com_mean,
                   com_sem, n_contexts, n_missing
    spread.csv     task (ba|nwp), method, layer, subject, threshold, count_mean, count_sem,
                   auc_mean, auc_sem
    positions.csv  task (ba|nwp|both), method, layer, subject, threshold, bin, distance_start,
                   distance_end, proportion
    features.csv   method, layer, subject, threshold, category, subset, percent_mean,
                   percent_sem, n_contexts, n_excluded
    masking.csv    see analyzers.masking.MASKING_COLUMNS
    stats.csv      family, comparison, n, statistic, p_value, p_adjusted, reject
"""

import json
import os
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..attribution.records import AttributionRecord
from ..encoders.cross_validation import AlignmentScore
from ..errors import DependencyError, RejectedInputError
from ..stimulus.corpus import CATEGORIES, Corpus
from ..utils.file_utils import atomic_write_csv, atomic_write_json
from ..utils.logger import app_logger as logger
from .features import SUBSETS, feature_percentages
from .masking import MASKING_COLUMNS
from .metrics import (
    attribution_mass,
    center_of_mass,
    curve_auc,
    distance_histogram,
    intersection_center_of_mass,
    iou,
    random_baseline_samples,
    standard_error,
    top_set,
)
from .statistics import STATS_COLUMNS, PairedComparison, paired_test_bh, results_frame

IOU_COLUMNS = ["method", "layer", "subject", "threshold", "iou_mean", "iou_sem",
               "random_mean", "random_sem", "n_contexts"]
COM_COLUMNS = ["task", "method", "layer", "subject", "mode", "threshold", "com_mean", "com_sem",
               "n_contexts", "n_missing"]
SPREAD_COLUMNS = ["task", "method", "layer", "subject", "threshold", "count_mean", "count_sem",
                  "auc_mean", "auc_sem"]
POSITION_COLUMNS = ["task", "method", "layer", "subject", "threshold", "bin", "distance_start",
                    "distance_end", "proportion"]
FEATURE_COLUMNS = ["method", "layer", "subject", "threshold", "category", "subset",
                   "percent_mean", "percent_sem", "n_contexts", "n_excluded"]

ANALYSIS_TABLES = ("iou", "com", "spread", "positions", "features", "stats")
REPORT_TABLES = ("iou", "com", "spread", "positions", "features", "masking", "stats")

GroupKey = Tuple[str, int, int]
Pair = Tuple[AttributionRecord, AttributionRecord]


@dataclass(frozen=True)
class AnalysisSettings:
    thresholds: Tuple[float, ...]
    bin_width: int = 16
    com_mode: str = "top"
    com_threshold: float = 60
    distance_origin: int = 0
    signed: bool = False
    positional_thresholds: Tuple[float, ...] = (10, 60)
    feature_thresholds: Tuple[float, ...] = (10, 60, 80)
    random_baseline_draws: int = 100
    alpha: float = 0.05
    seed: int = 0

    @classmethod
    def from_config(cls, pipeline, seed: int) -> "AnalysisSettings":
        return cls(
            thresholds=tuple(pipeline.thresholds),
            bin_width=pipeline.bin_width,
            com_mode=pipeline.com_mode,
            com_threshold=pipeline.com_threshold,
            distance_origin=pipeline.distance_origin,
            signed=pipeline.signed,
            positional_thresholds=tuple(pipeline.positional_thresholds),
            feature_thresholds=tuple(pipeline.feature_thresholds),
            random_baseline_draws=pipeline.random_baseline_draws,
            alpha=pipeline.alpha,
            seed=seed
        )


@dataclass
class MetricsReport:
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    summary: Dict = field(default_factory=dict)


def _mean_sem(values: Sequence[float]) -> Tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return float("nan"), float("nan")
    return float(values.mean()), float(standard_error(values))


def pair_records(records: Sequence[AttributionRecord]) -> Dict[GroupKey, List[Pair]]:
    """Group BA records by (method, layer, subject), each paired with the NWP record of its TR."""
    nwp = {(r.target.method, r.target.tr_key): r for r in records if r.target.task == "nwp"}
    groups: Dict[GroupKey, List[Pair]] = defaultdict(list)
    for record in records:
        t = record.target
        if t.task != "brain":
            continue
        partner = nwp.get((t.method, t.tr_key))
        if partner is None:
            logger.warning(f"No NWP record for TR {t.tr_key} ({t.method}); BA record left unpaired")
            continue
        groups[(t.method, t.layer, t.subject)].append((record, partner))
    return dict(sorted(groups.items()))


def nwp_groups(records: Sequence[AttributionRecord]) -> Dict[str, List[AttributionRecord]]:
    groups: Dict[str, List[AttributionRecord]] = defaultdict(list)
    for record in records:
        if record.target.task == "nwp":
            groups[record.target.method].append(record)
    return dict(sorted(groups.items()))


def iou_table(pairs: Dict[GroupKey, List[Pair]], settings: AnalysisSettings) -> pd.DataFrame:
    rows = []
    for (method, layer, subject), group in pairs.items():
        for threshold in settings.thresholds:
            observed, baseline = [], []
            for ba, nwp in group:
                a = top_set(ba, threshold, settings.signed).as_set()
                b = top_set(nwp, threshold, settings.signed).as_set()
                if not a and not b:
                    continue
                observed.append(iou(a, b))
                n = len(np.union1d(ba.word_index, nwp.word_index))
                seed = [settings.seed, ba.target.run, ba.target.tr, int(round(threshold * 100))]
                baseline.append(random_baseline_samples(n, len(a), len(b), settings.random_baseline_draws, seed).mean())
            iou_mean, iou_sem = _mean_sem(observed)
            random_mean, random_sem = _mean_sem(baseline)
            rows.append([method, layer, subject, threshold, iou_mean, iou_sem, random_mean, random_sem, len(observed)])
    return pd.DataFrame(rows, columns=IOU_COLUMNS)


def _com_row(task, method, layer, subject, settings, values: List[Optional[float]]) -> list:
    present = [v for v in values if v is not None]
    if len(present) < len(values):
        logger.warning(f"{len(values) - len(present)} {task} contexts have no mass; CoM reported as missing")
    mean, sem = _mean_sem(present)
    return [task, method, layer, subject, settings.com_mode, settings.com_threshold, mean, sem,
            len(present), len(values) - len(present)]


def com_table(pairs, nwp_records, settings: AnalysisSettings) -> pd.DataFrame:
    def com(record):
        return center_of_mass(record, settings.com_mode, settings.com_threshold,
                              settings.distance_origin, settings.signed)

    rows = []
    for method, records in nwp_records.items():
        rows.append(_com_row("nwp", method, None, None, settings, [com(r) for r in records]))
    for (method, layer, subject), group in pairs.items():
        rows.append(_com_row("ba", method, layer, subject, settings, [com(ba) for ba, _ in group]))
        shared = []
        for ba, nwp in group:
            words = (top_set(ba, settings.com_threshold, settings.signed).as_set()
                     & top_set(nwp, settings.com_threshold, settings.signed).as_set())
            shared.append(intersection_center_of_mass(ba, nwp, words, settings.distance_origin, settings.signed))
        rows.append(_com_row("both", method, layer, subject, settings, shared))
    return pd.DataFrame(rows, columns=COM_COLUMNS)


def _counts(record: AttributionRecord, thresholds, signed: bool) -> Optional[np.ndarray]:
    if attribution_mass(record, signed).sum() <= 0:
        return None
    return np.array([len(top_set(record, t, signed)) for t in thresholds], dtype=np.float64)


def _spread_rows(task, method, layer, subject, counts: List[np.ndarray], thresholds) -> List[list]:
    if not counts:
        logger.warning(f"No {task} records with attribution mass for spread ({method}, layer {layer})")
        return []
    matrix = np.vstack(counts)
    aucs = curve_auc(thresholds, matrix)
    auc_mean, auc_sem = _mean_sem(aucs)
    means, sems = matrix.mean(axis=0), standard_error(matrix)
    return [
        [task, method, layer, subject, t, float(m), float(s), auc_mean, auc_sem]
        for t, m, s in zip(thresholds, means, np.broadcast_to(sems, means.shape))
    ]


def spread_tables(pairs, nwp_records, settings: AnalysisSettings) -> Tuple[pd.DataFrame, List[PairedComparison], List[PairedComparison]]:
    """Spread curve rows plus the BA-vs-NWP count and AUC comparisons over shared contexts."""
    thresholds = list(settings.thresholds)
    rows = []
    for method, records in nwp_records.items():
        counts = [c for c in (_counts(r, thresholds, settings.signed) for r in records) if c is not None]
        rows.extend(_spread_rows("nwp", method, None, None, counts, thresholds))

    count_tests, auc_tests = [], []
    for (method, layer, subject), group in pairs.items():
        ba_counts, paired_ba, paired_nwp = [], [], []
        for ba, nwp in group:
            a = _counts(ba, thresholds, settings.signed)
            b = _counts(nwp, thresholds, settings.signed)
            if a is not None:
                ba_counts.append(a)
            if a is not None and b is not None:
                paired_ba.append(a)
                paired_nwp.append(b)
        rows.extend(_spread_rows("ba", method, layer, subject, ba_counts, thresholds))
        if len(paired_ba) < 2:
            logger.warning(f"Fewer than 2 paired contexts for layer {layer}, subject {subject}; spread not tested")
            continue
        a, b = np.vstack(paired_ba), np.vstack(paired_nwp)
        label = f"{method}/layer{layer}/subject{subject}"
        for i, t in enumerate(thresholds):
            count_tests.append(PairedComparison(f"{label}/t{t:g}", a[:, i], b[:, i]))
        auc_tests.append(PairedComparison(label, curve_auc(thresholds, a), curve_auc(thresholds, b)))
    return pd.DataFrame(rows, columns=SPREAD_COLUMNS), count_tests, auc_tests


def _max_distance(records: Sequence[AttributionRecord]) -> int:
    return max((int(r.distance.max()) for r in records if len(r)), default=0)


def _position_rows(task, method, layer, subject, threshold, distances, settings, n_bins) -> List[list]:
    if not distances:
        logger.warning(f"No top-attributed {task} words at t={threshold:g}; histogram is empty")
    proportions = distance_histogram(distances, settings.bin_width, n_bins)
    return [
        [task, method, layer, subject, threshold, b, b * settings.bin_width,
         (b + 1) * settings.bin_width - 1, float(p)]
        for b, p in enumerate(proportions)
    ]


def _top_distances(record: AttributionRecord, words) -> List[int]:
    return [int(d) for w, d in zip(record.word_index, record.distance) if int(w) in words]


def positions_table(pairs, nwp_records, settings: AnalysisSettings, n_bins: int) -> pd.DataFrame:
    rows = []
    for method, records in nwp_records.items():
        for t in settings.positional_thresholds:
            distances = [d for r in records for d in _top_distances(r, top_set(r, t, settings.signed).as_set())]
            rows.extend(_position_rows("nwp", method, None, None, t, distances, settings, n_bins))
    for (method, layer, subject), group in pairs.items():
        for t in settings.positional_thresholds:
            ba_distances, shared_distances = [], []
            for ba, nwp in group:
                a = top_set(ba, t, settings.signed).as_set()
                b = top_set(nwp, t, settings.signed).as_set()
                ba_distances.extend(_top_distances(ba, a))
                shared_distances.extend(_top_distances(ba, a & b))
            rows.extend(_position_rows("ba", method, layer, subject, t, ba_distances, settings, n_bins))
            rows.extend(_position_rows("both", method, layer, subject, t, shared_distances, settings, n_bins))
    return pd.DataFrame(rows, columns=POSITION_COLUMNS)


def features_table(pairs, corpus: Corpus, settings: AnalysisSettings) -> pd.DataFrame:
    rows = []
    for (method, layer, subject), group in pairs.items():
        for t in settings.feature_thresholds:
            tops = [
                (ba, top_set(ba, t, settings.signed).as_set(), top_set(nwp, t, settings.signed).as_set())
                for ba, nwp in group
            ]
            for category in CATEGORIES:
                per_context = [
                    feature_percentages(corpus, [int(w) for w in ba.word_index], a, b, category)
                    for ba, a, b in tops
                ]
                kept = [p for p in per_context if p is not None]
                excluded = len(per_context) - len(kept)
                if excluded:
                    logger.warning(
                        f"{excluded} contexts have no {category} features (layer {layer}, subject {subject}, "
                        f"t={t:g}); excluded from means"
                    )
                for subset in SUBSETS:
                    mean, sem = _mean_sem([p[subset] for p in kept])
                    rows.append([method, layer, subject, t, category, subset, mean, sem, len(kept), excluded])
    return pd.DataFrame(rows, columns=FEATURE_COLUMNS)


def layer_alignment_comparisons(scores: Sequence[AlignmentScore]) -> List[PairedComparison]:
    """Pairwise per-voxel r comparisons between layers, r averaged over subjects."""
    per_layer = defaultdict(list)
    for score in scores:
        per_layer[score.layer].append(score.r)
    averaged = {}
    for layer, values in sorted(per_layer.items()):
        if len({v.shape for v in values}) != 1:
            raise RejectedInputError(f"Subjects of layer {layer} have different voxel counts")
        averaged[layer] = np.mean(values, axis=0)
    return [
        PairedComparison(f"layer{a}_vs_layer{b}", averaged[a], averaged[b])
        for a, b in combinations(sorted(averaged), 2)
    ]


def _tested(family: str, comparisons: Sequence[PairedComparison], alpha: float) -> pd.DataFrame:
    usable = [c for c in comparisons if len(c.first) >= 2]
    if len(usable) < len(comparisons):
        logger.warning(f"{len(comparisons) - len(usable)} {family} comparisons have fewer than 2 pairs; skipped")
    return results_frame(paired_test_bh(usable, alpha, family))


def analyze_records(
    records: Sequence[AttributionRecord],
    corpus: Corpus,
    alignment: Sequence[AlignmentScore],
    settings: AnalysisSettings
) -> MetricsReport:
    """All record-based tables plus spread and layer-alignment statistics.

    Args:
        records: BA and NWP attribution records
        corpus: Annotated corpus the records index into
        alignment: Per-voxel alignment scores from the fit stage
        settings: Thresholds and analysis switches

    Returns:
        MetricsReport with iou, com, spread, positions, features and stats tables
    """
    if not records:
        raise RejectedInputError("No attribution records to analyze")
    pairs = pair_records(records)
    nwp_records = nwp_groups(records)
    n_bins = _max_distance(records) // settings.bin_width + 1

    spread, count_tests, auc_tests = spread_tables(pairs, nwp_records, settings)
    stats = pd.concat([
        _tested("spread_count", count_tests, settings.alpha),
        _tested("spread_auc", auc_tests, settings.alpha),
        _tested("layer_alignment", layer_alignment_comparisons(alignment), settings.alpha),
    ], ignore_index=True)

    report = MetricsReport(tables={
        "iou": iou_table(pairs, settings),
        "com": com_table(pairs, nwp_records, settings),
        "spread": spread,
        "positions": positions_table(pairs, nwp_records, settings, n_bins),
        "features": features_table(pairs, corpus, settings),
        "stats": stats,
    })
    report.summary = summarize(report.tables)
    return report


def _records(frame: pd.DataFrame) -> List[Dict]:
    return json.loads(frame.to_json(orient="records"))


def summarize(tables: Dict[str, pd.DataFrame]) -> Dict:
    """Compact JSON view: headline means per table and significance counts per family."""
    summary: Dict = {"tables": sorted(tables)}
    iou_frame = tables.get("iou")
    if iou_frame is not None and not iou_frame.empty:
        summary["iou_by_threshold"] = _records(
            iou_frame.groupby("threshold", as_index=False)[["iou_mean", "random_mean"]].mean()
        )
    spread = tables.get("spread")
    if spread is not None and not spread.empty:
        auc = spread.drop_duplicates(["task", "method", "layer", "subject"])
        summary["spread_auc"] = _records(auc[["task", "method", "layer", "subject", "auc_mean", "auc_sem"]])
    com = tables.get("com")
    if com is not None and not com.empty:
        summary["center_of_mass"] = _records(com[["task", "method", "layer", "subject", "com_mean"]])
    masking = tables.get("masking")
    if masking is not None and not masking.empty:
        summary["masking"] = _records(
            masking.groupby(["task", "threshold"], as_index=False)[["delta_top", "delta_random"]].mean()
        )
    stats = tables.get("stats")
    if stats is not None and not stats.empty:
        summary["significant"] = {
            str(family): {"tested": int(len(group)), "rejected": int(group["reject"].astype(bool).sum())}
            for family, group in stats.groupby("family", sort=True)
        }
    return summary


def write_report(report: MetricsReport, directory: str) -> List[str]:
    """Write every table as <name>.csv plus summary.json; returns the written paths."""
    paths = []
    for name, frame in sorted(report.tables.items()):
        path = os.path.join(directory, f"{name}.csv")
        atomic_write_csv(path, frame)
        paths.append(path)
    summary_path = os.path.join(directory, "summary.json")
    atomic_write_json(summary_path, report.summary)
    paths.append(summary_path)
    return paths


def read_table(directory: str, name: str, producer: str) -> pd.DataFrame:
    path = os.path.join(directory, f"{name}.csv")
    if not os.path.isfile(path):
        raise DependencyError(path, producer)
    try:
        return pd.read_csv(path)
    except pd.errors.EmptyDataError:
        return pd.DataFrame()


def assemble_report(analysis_dir: str, masking_dir: str) -> MetricsReport:
    """Merge analyze and mask outputs into the full seven-table report."""
    tables = {name: read_table(analysis_dir, name, "analyze") for name in ANALYSIS_TABLES}
    tables["masking"] = read_table(masking_dir, "masking", "mask")
    masking_stats = read_table(masking_dir, "stats", "mask")
    tables["stats"] = pd.concat([tables["stats"], masking_stats], ignore_index=True).reindex(columns=STATS_COLUMNS)
    tables["masking"] = tables["masking"].reindex(columns=MASKING_COLUMNS)
    report = MetricsReport(tables={name: tables[name] for name in REPORT_TABLES})
    report.summary = summarize(report.tables)
    return report
