import os

import numpy as np
import pandas as pd
import pytest

from src.analyzers import (
    AnalysisSettings,
    MaskingExperiment,
    analyze_records,
    assemble_report,
    center_of_mass,
    expected_random_iou,
    feature_percentages,
    iou,
    masking_frame,
    masking_stats,
    paired_test_bh,
    PairedComparison,
    positional_histogram,
    random_baseline_iou,
    spread_curve,
    top_set,
    write_report,
)
from src.analyzers.masking import MaskingResult, replacement_surfaces
from src.analyzers.metrics import curve_auc, distance_histogram, intersection_center_of_mass, random_baseline_samples
from src.analyzers.report import pair_records
from src.analyzers.statistics import benjamini_hochberg, paired_ttest
from src.attribution import AttributionTarget, make_record, nwp_problem
from src.config import DEFAULT_THRESHOLDS, ModelConfig
from src.encoders import AlignmentScore
from src.errors import DependencyError, RejectedInputError
from src.models import init_params
from src.stimulus import AnnotationSet, Corpus, tr_layout
from src.stimulus.tokenizer import SubwordTokenizer

# Scores over words 0..3; word 3 is the most recent
SAMPLE_SCORES = {0: 0.1, 1: -0.5, 2: 0.2, 3: 0.2}


def _nwp(scores, tr=1):
    return make_record(AttributionTarget("nwp", 0, tr), scores, max(scores), 1.0)


def _brain(scores, tr=1, layer=0, subject=0):
    return make_record(AttributionTarget("brain", 0, tr, layer=layer, subject=subject), scores, max(scores), 0.5)


class TestTopSets:
    """Tests for top-t% sets and IoU."""

    def setup_method(self):
        self.record = _nwp(SAMPLE_SCORES)

    def test_smallest_prefix_reaching_threshold(self):
        assert top_set(self.record, 50).words == (1,)
        top = top_set(self.record, 60)
        assert top.words == (1, 3)
        assert top.covered == pytest.approx(0.7)
        assert len(top_set(self.record, 100)) == 4

    def test_ties_go_to_recent_word(self):
        assert top_set(self.record, 70).words == (1, 3)
        assert top_set(self.record, 71).words == (1, 3, 2)

    def test_signed_ranking_ignores_negative_mass(self):
        top = top_set(self.record, 100, signed=True)
        assert 1 not in top.words
        assert set(top.words) == {0, 2, 3}

    def test_zero_words_never_selected(self):
        record = _nwp({0: 0.0, 1: 1.0, 2: 0.0})
        assert top_set(record, 100).words == (1,)

    def test_no_mass_gives_empty_set(self):
        assert top_set(_nwp({0: 0.0, 1: 0.0}), 50).words == ()

    def test_threshold_range(self):
        with pytest.raises(RejectedInputError):
            top_set(self.record, 0)
        with pytest.raises(RejectedInputError):
            top_set(self.record, 101)

    def test_iou(self):
        assert iou({1, 2}, {2, 3}) == pytest.approx(1 / 3)
        assert iou({1}, {1}) == 1.0
        assert iou(set(), set()) == 0.0

    def test_expected_random_iou_matches_monte_carlo(self):
        exact = expected_random_iou(20, 5, 8)
        estimate = random_baseline_iou(20, 5, 8, draws=20000, seed=4)
        assert estimate == pytest.approx(exact, abs=0.01)
        assert expected_random_iou(6, 6, 6) == pytest.approx(1.0)
        assert expected_random_iou(6, 0, 0) == 0.0

    def test_monte_carlo_mean_within_three_standard_errors(self):
        for n, size_a, size_b in [(20, 5, 8), (100, 1, 1), (40, 12, 3)]:
            samples = random_baseline_samples(n, size_a, size_b, draws=10_000, seed=7)
            standard_error = samples.std(ddof=1) / np.sqrt(samples.size)
            assert abs(samples.mean() - expected_random_iou(n, size_a, size_b)) < 3 * standard_error
        assert expected_random_iou(100, 1, 1) == pytest.approx(0.01)

    def test_random_baseline_is_seeded(self):
        assert random_baseline_iou(30, 4, 6, seed=[1, 0, 3, 1000]) == random_baseline_iou(30, 4, 6, seed=[1, 0, 3, 1000])

    def test_random_baseline_sizes_checked(self):
        with pytest.raises(RejectedInputError):
            random_baseline_iou(3, 4, 1)


class TestLocality:
    """Tests for center of mass, spread and positional histograms."""

    def setup_method(self):
        self.record = _nwp(SAMPLE_SCORES)

    def test_center_of_mass(self):
        assert center_of_mass(self.record) == pytest.approx(1.5)
        assert center_of_mass(self.record, origin=1) == pytest.approx(2.5)
        assert center_of_mass(self.record, mode="top", threshold=60) == pytest.approx(1.0 / 0.7)

    def test_center_of_mass_without_mass(self):
        assert center_of_mass(_nwp({0: 0.0, 1: 0.0})) is None

    def test_center_of_mass_mode_checked(self):
        with pytest.raises(RejectedInputError):
            center_of_mass(self.record, mode="median")

    def test_intersection_center_of_mass(self):
        other = _brain({0: 0.0, 1: 1.0, 2: 0.0, 3: 1.0})
        # weights: word 1 -> 0.5 + 0.5, word 3 -> 0.2 + 0.5
        assert intersection_center_of_mass(self.record, other, {1, 3}) == pytest.approx(2 * 1.0 / 1.7)
        assert intersection_center_of_mass(self.record, other, set()) is None

    def test_spread_curve(self):
        curve = spread_curve([self.record, _nwp({0: 1.0, 1: 1.0})], [50, 100])
        np.testing.assert_array_equal(curve.counts, [[1, 4], [1, 2]])
        np.testing.assert_allclose(curve.aucs, [1.25, 0.75])
        assert curve.auc == pytest.approx(1.0)

    def test_uniform_scores_follow_closed_form(self):
        curve = spread_curve([_nwp({w: 1.0 for w in range(50)})], DEFAULT_THRESHOLDS)
        # ceil(50 * t / 100) words cover t% of uniform mass
        expected = [1, 1, 2, 3, 5, 10, 15, 20, 25, 30, 35, 40, 45, 48, 49]
        np.testing.assert_array_equal(curve.counts[0], expected)
        assert curve.auc == pytest.approx(24.055)

    def test_spread_skips_records_without_mass(self):
        curve = spread_curve([self.record, _nwp({0: 0.0})], [50, 100])
        assert curve.counts.shape == (1, 2)

    def test_curve_auc_uses_unit_interval(self):
        assert curve_auc([0, 100], np.array([2.0, 2.0])) == pytest.approx(2.0)

    def test_distance_histogram(self):
        np.testing.assert_allclose(distance_histogram([0, 1, 16, 40], 16), [0.5, 0.25, 0.25])
        np.testing.assert_allclose(distance_histogram([], 16, n_bins=2), [0.0, 0.0])

    def test_positional_histogram(self):
        histogram = positional_histogram([self.record], 60, bin_width=2)
        # top words 1 and 3 sit at distances 2 and 0
        np.testing.assert_allclose(histogram, [0.5, 0.5])


class TestFeatures:
    """Tests for feature-category percentages."""

    def setup_method(self):
        annotations = [[
            AnnotationSet(semantic=frozenset({0})),
            AnnotationSet(semantic=frozenset({0, 1})),
            AnnotationSet(semantic=frozenset({1}), syntactic=frozenset({0})),
            AnnotationSet(),
        ]]
        self.corpus = Corpus.from_runs([["owl", "fox", "hill", "the"]], annotations,
                                       vocabularies={"semantic": ["a", "b"], "syntactic": ["n"], "discourse": []})

    def test_percentages_per_subset(self):
        result = feature_percentages(self.corpus, range(4), {0, 2}, {2, 3}, "semantic")
        assert result["ba_only"] == pytest.approx(25.0)
        assert result["both"] == pytest.approx(25.0)
        assert result["nwp_only"] == 0.0

    def test_context_without_features(self):
        assert feature_percentages(self.corpus, range(4), {0}, {1}, "discourse") is None

    def test_unknown_category(self):
        with pytest.raises(RejectedInputError):
            feature_percentages(self.corpus, range(4), {0}, {1}, "prosody")


class TestStatistics:
    """Tests for paired tests and Benjamini-Hochberg correction."""

    def test_benjamini_hochberg_by_hand(self):
        reject, adjusted = benjamini_hochberg([0.01, 0.04, 0.03, 0.005], alpha=0.05)
        np.testing.assert_allclose(adjusted, [0.02, 0.04, 0.04, 0.02])
        assert reject.all()

    def test_benjamini_hochberg_partial_rejection(self):
        reject, _ = benjamini_hochberg([0.001, 0.2, 0.9], alpha=0.05)
        assert list(reject) == [True, False, False]

    def test_paired_ttest_zero_variance(self):
        assert paired_ttest([1.0, 2.0, 3.0], [0.0, 1.0, 2.0]) == (0.0, 1.0)

    def test_paired_ttest_validation(self):
        with pytest.raises(RejectedInputError):
            paired_ttest([1.0], [2.0])
        with pytest.raises(RejectedInputError):
            paired_ttest([1.0, 2.0], [2.0])

    def test_family_results_keep_order(self):
        rng = np.random.default_rng(0)
        base = rng.standard_normal(12)
        comparisons = [
            PairedComparison("shifted", base + 2.0 + 0.1 * rng.standard_normal(12), base),
            PairedComparison("same", base + 0.01 * rng.standard_normal(12), base),
        ]
        results = paired_test_bh(comparisons, family="demo")
        assert [r.comparison for r in results] == ["shifted", "same"]
        assert results[0].reject and results[0].family == "demo"
        assert results[0].p_adjusted >= results[0].p_value


class TestMasking:
    """Tests for masking ablations."""

    def setup_method(self):
        words = ["the", "wizard", "saw", "an", "owl", "near", "the", "castle", "at", "dusk"]
        self.corpus = Corpus.from_runs([[words[i % 10] for i in range(24)]])
        self.layout = tr_layout(self.corpus)
        self.tokenizer = SubwordTokenizer(512)
        self.experiment = MaskingExperiment(self.corpus, self.layout, self.tokenizer, context_words=3, delays=2)

    def test_replacements_come_from_other_positions(self):
        corpus = Corpus.from_runs([["owl", "fox"]])
        replacements = replacement_surfaces(corpus, [0, 1], np.random.default_rng(0))
        assert replacements == {0: "fox", 1: "owl"}

    def test_replacements_keep_token_count(self):
        corpus = Corpus.from_runs([["owl", "wizard", "fox", "castle", "at", "garden", "an", "dusk"]])
        counts = [len(self.tokenizer.tokenize(w.surface)) for w in corpus.words]
        replacements = replacement_surfaces(corpus, range(8), np.random.default_rng(3), counts)
        for position, surface in replacements.items():
            assert len(self.tokenizer.tokenize(surface)) == counts[position]
            assert surface != corpus.words[position].surface

    def test_replacement_falls_back_to_shorter_words(self):
        corpus = Corpus.from_runs([["owl", "wizard", "fox"]])
        replacements = replacement_surfaces(corpus, [1], np.random.default_rng(0), [1, 2, 1])
        assert replacements[1] in ("owl", "fox")
        with pytest.raises(RejectedInputError):
            replacement_surfaces(corpus, [0], np.random.default_rng(0), [1, 2])

    def test_masking_fits_tight_position_limit(self):
        record = _nwp({w: 1.0 for w in range(2, 12)}, tr=2)
        wide = init_params(ModelConfig(n_layers=3, hidden_size=8, n_heads=2, vocab_size=512,
                                       max_positions=64, mlp_ratio=2))
        problem = nwp_problem(wide, self.corpus, self.layout, self.tokenizer, (0, 2), 3, 2)
        needed = len(problem.token_ids) + len(problem.target_ids) - 1
        tight = init_params(ModelConfig(n_layers=3, hidden_size=8, n_heads=2, vocab_size=512,
                                        max_positions=needed, mlp_ratio=2))
        for seed in range(5):
            top, random, count = self.experiment.masked_corpora(record, 100, seed)
            assert count == 10
            for masked in (top, random):
                assert [len(self.tokenizer.tokenize(w.surface)) for w in masked.words] == \
                    self.experiment.token_counts
            result = self.experiment.nwp(tight, [record], 100, seed)
            assert result.n_masked == 10

    def test_masked_corpora(self):
        record = _nwp({w: (1.0 if w == 9 else 0.01) for w in range(2, 12)}, tr=2)
        top, random, count = self.experiment.masked_corpora(record, 50, seed=1)
        assert count == 1
        changed = [i for i, (a, b) in enumerate(zip(top.words, self.corpus.words)) if a.surface != b.surface]
        assert set(changed) <= {9}
        again, _, _ = self.experiment.masked_corpora(record, 50, seed=1)
        assert again == top
        assert sum(a.surface != b.surface for a, b in zip(random.words, self.corpus.words)) <= 1

    def test_empty_top_set_masks_nothing(self):
        params = init_params(ModelConfig(n_layers=3, hidden_size=8, n_heads=2, vocab_size=512,
                                         max_positions=64, mlp_ratio=2))
        records = [_nwp({w: 0.0 for w in range(2, 12)}, tr=2)]
        result = self.experiment.nwp(params, records, 50, seed=0)
        assert result.n_masked == 0
        assert result.delta_top == 0.0 and result.delta_random == 0.0
        assert result.baseline > 0.0

    def test_masking_stats_pair_seeds(self):
        results = [
            MaskingResult("nwp", None, None, 10.0, seed, "ce_relative_increase", 5, 2.0,
                          1.0, 1.0 + top, 1.0 + rand, top, rand)
            for seed, (top, rand) in enumerate([(0.5, 0.1), (0.6, 0.05), (0.55, 0.12), (0.7, 0.0)])
        ]
        frame = masking_frame(results)
        stats = masking_stats(frame)
        assert list(stats["comparison"]) == ["nwp/t10"]
        assert stats["n"].iloc[0] == 4
        assert bool(stats["reject"].iloc[0])


def _report_records(rng, n_trs=6):
    records = []
    for tr in range(1, n_trs + 1):
        words = range(4 * tr - 4, 4 * tr + 4)
        records.append(_nwp({w: float(rng.standard_normal()) for w in words}, tr=tr))
        records.append(_brain({w: float(rng.standard_normal()) for w in words}, tr=tr, layer=1))
    return records


class TestReport:
    """Tests for the metrics report tables."""

    def setup_method(self):
        rng = np.random.default_rng(11)
        self.records = _report_records(rng)
        annotations = [[AnnotationSet(semantic=frozenset({i % 2})) for i in range(32)]]
        self.corpus = Corpus.from_runs([["owl"] * 32], annotations,
                                       vocabularies={"semantic": ["a", "b"], "syntactic": [], "discourse": []})
        self.alignment = [AlignmentScore(layer, 0, rng.standard_normal(5) + layer) for layer in range(3)]
        self.settings = AnalysisSettings(thresholds=(10, 50, 90), bin_width=4, random_baseline_draws=20,
                                         positional_thresholds=(50,), feature_thresholds=(50,))

    def test_pairs_need_nwp_partner(self):
        unpaired = _brain({0: 1.0, 1: 2.0}, tr=9, layer=1)
        pairs = pair_records(self.records + [unpaired])
        assert list(pairs) == [("gxi", 1, 0)]
        assert len(pairs[("gxi", 1, 0)]) == 6

    def test_tables(self):
        report = analyze_records(self.records, self.corpus, self.alignment, self.settings)
        assert set(report.tables) == {"iou", "com", "spread", "positions", "features", "stats"}
        assert list(report.tables["iou"]["threshold"]) == [10, 50, 90]
        assert set(report.tables["com"]["task"]) == {"ba", "nwp", "both"}
        families = set(report.tables["stats"]["family"])
        assert {"spread_count", "spread_auc", "layer_alignment"} <= families
        assert report.summary["significant"]["layer_alignment"]["tested"] == 3

    def test_features_exclude_missing_categories(self):
        report = analyze_records(self.records, self.corpus, self.alignment, self.settings)
        features = report.tables["features"]
        syntactic = features[features["category"] == "syntactic"]
        assert (syntactic["n_contexts"] == 0).all()
        semantic = features[features["category"] == "semantic"]
        assert (semantic["n_contexts"] == 6).all()

    def test_analysis_is_deterministic(self):
        first = analyze_records(self.records, self.corpus, self.alignment, self.settings)
        second = analyze_records(self.records, self.corpus, self.alignment, self.settings)
        for name in first.tables:
            pd.testing.assert_frame_equal(first.tables[name], second.tables[name])

    def test_no_records(self):
        with pytest.raises(RejectedInputError):
            analyze_records([], self.corpus, self.alignment, self.settings)

    def test_assemble_report(self, tmp_path):
        analysis_dir = os.path.join(tmp_path, "analysis")
        masking_dir = os.path.join(tmp_path, "masking")
        os.makedirs(analysis_dir)
        os.makedirs(masking_dir)
        write_report(analyze_records(self.records, self.corpus, self.alignment, self.settings), analysis_dir)
        results = [
            MaskingResult("nwp", None, None, 10.0, seed, "ce_relative_increase", 5, 2.0, 1.0, 1.5, 1.1, d, 0.1)
            for seed, d in enumerate([0.5, 0.6])
        ]
        frame = masking_frame(results)
        frame.to_csv(os.path.join(masking_dir, "masking.csv"), index=False)
        masking_stats(frame).to_csv(os.path.join(masking_dir, "stats.csv"), index=False)

        report = assemble_report(analysis_dir, masking_dir)
        assert len(report.tables) == 7
        assert "masking" in set(report.tables["stats"]["family"])
        assert report.summary["masking"][0]["task"] == "nwp"

    def test_missing_analysis_names_producer(self, tmp_path):
        with pytest.raises(DependencyError) as excinfo:
            assemble_report(str(tmp_path), str(tmp_path))
        assert excinfo.value.producer == "analyze"
