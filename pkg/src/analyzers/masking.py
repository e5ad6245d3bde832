"""
Masking ablations.

For each attributed TR the top-t% words of its record are replaced by words drawn uniformly
from other corpus positions with the same token count, and the task metric is recomputed on
the perturbed corpus. A control replaces the same number of words picked uniformly from the
record's extended context.

    brain   percentage drop of the mean Pearson r across voxels, pooled over TRs
    nwp     relative increase of the mean next-word cross-entropy, pooled over TRs

Every random stream is seeded from (seed, run, tr, purpose) so results do not depend on the
order TRs are processed in.
"""

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ..attribution.brain import extended_context, predict_tr
from ..attribution.nwp import nwp_loss, nwp_problem
from ..attribution.records import AttributionRecord
from ..attribution.runner import BrainFit
from ..encoders.ridge import pearson_per_voxel
from ..errors import RejectedInputError
from ..models.toy_lm import LayerRepresentation, ModelParams, Representation
from ..stimulus.corpus import Corpus
from ..stimulus.pipeline import TRKey, TRLayout
from ..stimulus.tokenizer import SubwordTokenizer
from ..utils.logger import app_logger as logger
from .metrics import top_set
from .statistics import PairedComparison, paired_test_bh, results_frame

MASKING_COLUMNS = [
    "task", "layer", "subject", "threshold", "seed", "metric", "n_contexts", "n_masked",
    "baseline", "masked_top", "masked_random", "delta_top", "delta_random",
]

# purposes of the per-TR random streams
_TOP_REPLACEMENTS, _RANDOM_POSITIONS, _RANDOM_REPLACEMENTS = 0, 1, 2


@dataclass(frozen=True)
class MaskingResult:
    task: str
    layer: Optional[int]
    subject: Optional[int]
    threshold: float
    seed: int
    metric: str
    n_contexts: int
    n_masked: float
    baseline: float
    masked_top: float
    masked_random: float
    delta_top: float
    delta_random: float


def _stream(seed: int, key: TRKey, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, key[0], key[1], purpose])


def replacement_surfaces(
    corpus: Corpus,
    positions: Sequence[int],
    rng: np.random.Generator,
    token_counts: Optional[Sequence[int]] = None
) -> Dict[int, str]:
    """A surface for each position, drawn uniformly from the other corpus positions.

    With token_counts only positions whose word has the same token count are candidates (or, if
    there are none, the shorter ones), so a masked context never needs more positions than the
    original.
    """
    n = len(corpus.words)
    if n < 2:
        raise RejectedInputError("Masking needs a corpus of at least 2 words")
    counts = None if token_counts is None else np.asarray(token_counts)
    if counts is not None and len(counts) != n:
        raise RejectedInputError(f"{len(counts)} token counts for a corpus of {n} words")
    replacements = {}
    for position in sorted(positions):
        if counts is None:
            draw = int(rng.integers(0, n - 1))
            if draw >= position:
                draw += 1
        else:
            candidates = np.flatnonzero(counts == counts[position])
            candidates = candidates[candidates != position]
            if len(candidates) == 0:
                candidates = np.flatnonzero(counts < counts[position])
            if len(candidates) == 0:
                raise RejectedInputError(
                    f"No replacement of at most {counts[position]} tokens for word {position}"
                )
            draw = int(candidates[rng.integers(0, len(candidates))])
        replacements[position] = corpus.words[draw].surface
    return replacements


def random_positions(record: AttributionRecord, count: int, rng: np.random.Generator) -> List[int]:
    return sorted(int(w) for w in rng.choice(record.word_index, size=count, replace=False))


def _pearson_drop(baseline: float, masked: float) -> float:
    if abs(baseline) < 1e-12:
        logger.warning("Baseline correlation is zero; reporting a 0% drop")
        return 0.0
    return 100.0 * (baseline - masked) / abs(baseline)


def _relative_increase(baseline: float, masked: float) -> float:
    if baseline <= 0:
        logger.warning("Baseline cross-entropy is zero; reporting no increase")
        return 0.0
    return (masked - baseline) / baseline


class MaskingExperiment:
    """Masks top-attributed and random words and measures the effect on either task."""

    def __init__(
        self,
        corpus: Corpus,
        layout: TRLayout,
        tokenizer: SubwordTokenizer,
        context_words: int,
        delays: int,
        signed: bool = False
    ):
        self.corpus = corpus
        self.layout = layout
        self.tokenizer = tokenizer
        self.context_words = context_words
        self.delays = delays
        self.signed = signed
        self.token_counts = [len(tokenizer.tokenize(word.surface)) for word in corpus.words]

    def masked_corpora(self, record: AttributionRecord, threshold: float, seed: int):
        """(top-masked corpus, random-masked corpus, number of masked words) for one record."""
        key = record.target.tr_key
        top = top_set(record, threshold, self.signed).words
        if not top:
            return self.corpus, self.corpus, 0
        top_masked = self.corpus.with_surfaces(
            replacement_surfaces(
                self.corpus, top, _stream(seed, key, _TOP_REPLACEMENTS), self.token_counts
            )
        )
        control = random_positions(record, len(top), _stream(seed, key, _RANDOM_POSITIONS))
        random_masked = self.corpus.with_surfaces(
            replacement_surfaces(
                self.corpus, control, _stream(seed, key, _RANDOM_REPLACEMENTS), self.token_counts
            )
        )
        return top_masked, random_masked, len(top)

    def brain(
        self,
        representation: Representation,
        embed_table: np.ndarray,
        fit: BrainFit,
        records: Sequence[AttributionRecord],
        threshold: float,
        seed: int,
        max_positions: int,
        layer: Optional[int] = None,
        subject: Optional[int] = None
    ) -> MaskingResult:
        """Percentage drop in mean voxel correlation after masking, top set vs random control.

        Args:
            representation: Representation the encoding model was fitted on
            embed_table: Token embedding table feeding the representation
            fit: Encoding model with its design rows and responses
            records: Brain records of one (layer, subject)
            threshold: Top-set threshold t
            seed: Masking seed
            max_positions: Model position limit
            layer: Layer label for the result
            subject: Subject label for the result

        Returns:
            MaskingResult with metric pearson_drop_pct
        """
        actual, base, top, rand = [], [], [], []
        masked_counts = []

        def prediction(corpus: Corpus, key: TRKey, fold) -> np.ndarray:
            extended = extended_context(
                corpus, self.layout, self.tokenizer, key, self.context_words, self.delays, max_positions
            )
            return fold.y_norm.inverse(predict_tr(representation, embed_table, extended, fold.heads))

        for record in records:
            key = record.target.tr_key
            row = fit.row_for(key)
            if row is None:
                logger.warning(f"TR {key} has no response row; left out of masking")
                continue
            fold = fit.model.fold_for_row(row)
            top_corpus, random_corpus, count = self.masked_corpora(record, threshold, seed)
            baseline = prediction(self.corpus, key, fold)
            actual.append(fit.responses[row])
            base.append(baseline)
            if count == 0:
                logger.warning(f"TR {key} has an empty top set; nothing masked")
                top.append(baseline)
                rand.append(baseline)
            else:
                top.append(prediction(top_corpus, key, fold))
                rand.append(prediction(random_corpus, key, fold))
            masked_counts.append(count)

        if len(actual) < 2:
            raise RejectedInputError("Brain masking needs at least 2 TRs with responses")
        actual = np.asarray(actual)
        r_base = float(pearson_per_voxel(np.asarray(base), actual).mean())
        r_top = float(pearson_per_voxel(np.asarray(top), actual).mean())
        r_random = float(pearson_per_voxel(np.asarray(rand), actual).mean())
        return MaskingResult(
            "brain", layer, subject, threshold, seed, "pearson_drop_pct", len(actual),
            float(np.mean(masked_counts)), r_base, r_top, r_random,
            _pearson_drop(r_base, r_top), _pearson_drop(r_base, r_random)
        )

    def nwp(
        self,
        params: ModelParams,
        records: Sequence[AttributionRecord],
        threshold: float,
        seed: int
    ) -> MaskingResult:
        """Relative increase in next-word cross-entropy after masking, top set vs random control."""
        base, top, rand = [], [], []
        masked_counts = []

        def loss(corpus: Corpus, key: TRKey) -> float:
            problem = nwp_problem(
                params, corpus, self.layout, self.tokenizer, key, self.context_words, self.delays
            )
            return nwp_loss(problem, params)

        for record in records:
            key = record.target.tr_key
            top_corpus, random_corpus, count = self.masked_corpora(record, threshold, seed)
            baseline = loss(self.corpus, key)
            base.append(baseline)
            if count == 0:
                logger.warning(f"TR {key} has an empty top set; nothing masked")
                top.append(baseline)
                rand.append(baseline)
            else:
                top.append(loss(top_corpus, key))
                rand.append(loss(random_corpus, key))
            masked_counts.append(count)

        if not base:
            raise RejectedInputError("NWP masking needs at least one record")
        ce_base, ce_top, ce_random = float(np.mean(base)), float(np.mean(top)), float(np.mean(rand))
        return MaskingResult(
            "nwp", None, None, threshold, seed, "ce_relative_increase", len(base),
            float(np.mean(masked_counts)), ce_base, ce_top, ce_random,
            _relative_increase(ce_base, ce_top), _relative_increase(ce_base, ce_random)
        )


def masking_experiment(
    experiment: MaskingExperiment,
    task: str,
    params: ModelParams,
    records: Sequence[AttributionRecord],
    threshold: float,
    seed: int,
    fit: Optional[BrainFit] = None,
    layer: Optional[int] = None,
    subject: Optional[int] = None
) -> MaskingResult:
    """One masking run for a task with the trained model's own representation."""
    if task == "nwp":
        return experiment.nwp(params, records, threshold, seed)
    if task != "brain":
        raise RejectedInputError(f"Unknown task {task!r}")
    if fit is None or layer is None:
        raise RejectedInputError("Brain masking needs an encoding fit and a layer")
    return experiment.brain(
        LayerRepresentation(params, layer), params.arrays["embed"], fit, records,
        threshold, seed, params.config.max_positions, layer, subject
    )


def masking_frame(results: Sequence[MaskingResult]) -> pd.DataFrame:
    frame = pd.DataFrame([asdict(r) for r in results], columns=MASKING_COLUMNS)
    return frame.sort_values(["task", "layer", "subject", "threshold", "seed"], na_position="first", kind="stable")


def masking_comparisons(frame: pd.DataFrame) -> List[PairedComparison]:
    """Top-set vs random-control deltas, paired over seeds, per (task, layer, subject, threshold)."""
    comparisons = []
    for (task, layer, subject, threshold), group in frame.groupby(
        ["task", "layer", "subject", "threshold"], sort=True, dropna=False
    ):
        group = group.sort_values("seed")
        label = task if pd.isna(layer) else f"{task}/layer{int(layer)}/subject{int(subject)}"
        comparisons.append(PairedComparison(
            f"{label}/t{threshold:g}",
            group["delta_top"].to_numpy(dtype=np.float64),
            group["delta_random"].to_numpy(dtype=np.float64)
        ))
    return comparisons


def masking_stats(frame: pd.DataFrame, alpha: float = 0.05) -> pd.DataFrame:
    comparisons = [c for c in masking_comparisons(frame) if len(c.first) >= 2]
    if not comparisons:
        logger.warning("Masking needs at least 2 seeds per setting for significance tests")
    return results_frame(paired_test_bh(comparisons, alpha, "masking"))
