"""Evaluation of attribution records: overlap, locality, spread, features, masking and statistics."""

from .features import SUBSETS, feature_percentages
from .masking import MaskingExperiment, MaskingResult, masking_experiment, masking_frame, masking_stats
from .metrics import (
    TopSet,
    center_of_mass,
    expected_random_iou,
    iou,
    positional_histogram,
    random_baseline_iou,
    spread_curve,
    top_set,
)
from .report import AnalysisSettings, MetricsReport, analyze_records, assemble_report, write_report
from .statistics import PairedComparison, paired_test_bh
