"""
Batch attribution over TRs, layers and subjects.

Work units are independent (each owns its tapes) and are chunked over worker processes; the
records come back in a deterministic order whatever the scheduling.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.worker_management import resolve_workers, run_parallel
from ..encoders.cross_validation import EncodingModel, FoldModel
from ..models.toy_lm import LayerRepresentation, ModelParams
from ..stimulus.corpus import Corpus
from ..stimulus.pipeline import TRKey, TRLayout
from ..stimulus.tokenizer import SubwordTokenizer
from ..utils.logger import app_logger as logger
from .brain import attribute_brain_tr
from .nwp import attribute_nwp
from .records import AttributionRecord


@dataclass(frozen=True)
class BrainFit:
    """Encoding model plus the design rows and aligned responses it was fitted on."""
    model: EncodingModel
    row_keys: np.ndarray
    responses: np.ndarray

    def row_for(self, key: TRKey) -> Optional[int]:
        matches = np.flatnonzero((self.row_keys[:, 0] == key[0]) & (self.row_keys[:, 1] == key[1]))
        return int(matches[0]) if matches.size else None

    def fold_for(self, key: TRKey) -> Optional[FoldModel]:
        row = self.row_for(key)
        return None if row is None else self.model.fold_for_row(row)

    def target_for(self, key: TRKey):
        """Heads and fold-standardized response of the fold that holds key out."""
        row = self.row_for(key)
        if row is None:
            return None
        fold = self.model.fold_for_row(row)
        return fold.heads, fold.y_norm.transform(self.responses[row])


@dataclass(frozen=True)
class AttributionSettings:
    context_words: int
    delays: int
    method: str = "gxi"
    ig_steps: int = 20
    ig_rule: str = "right"


@dataclass(frozen=True)
class _Unit:
    task: str
    key: TRKey
    layer: Optional[int] = None
    subject: Optional[int] = None


def _run_units(payload) -> List[AttributionRecord]:
    params, corpus, layout, tokenizer, fits, settings, units = payload
    records = []
    for unit in units:
        if unit.task == "nwp":
            records.append(attribute_nwp(
                params, corpus, layout, tokenizer, unit.key,
                settings.context_words, settings.delays, settings.method, settings.ig_steps, settings.ig_rule
            ))
            continue
        heads, response = fits[(unit.layer, unit.subject)].target_for(unit.key)
        records.append(attribute_brain_tr(
            LayerRepresentation(params, unit.layer), params.arrays["embed"], corpus, layout,
            tokenizer, heads, response, unit.key, settings.context_words,
            params.config.max_positions, settings.method, settings.ig_steps, unit.layer, unit.subject,
            settings.ig_rule
        ))
    return records


def attribution_keys(layout: TRLayout, corpus: Corpus, delays: int, limit: Optional[int] = None) -> List[TRKey]:
    """Design TRs that also have a following word for the NWP task, optionally evenly thinned."""
    last_word = len(corpus.words) - 1
    keys = [
        key for key in layout.design_keys(delays)
        if max(layout.effective_words(key)) < last_word
    ]
    if limit is not None and len(keys) > limit:
        picks = np.unique(np.linspace(0, len(keys) - 1, num=limit).round().astype(int))
        keys = [keys[i] for i in picks]
    return keys


def run_attributions(
    params: ModelParams,
    corpus: Corpus,
    layout: TRLayout,
    tokenizer: SubwordTokenizer,
    fits: Dict[Tuple[int, int], BrainFit],
    keys: Sequence[TRKey],
    settings: AttributionSettings,
    jobs: int = 1,
    progress_callback=None
) -> List[AttributionRecord]:
    """NWP records for every key and brain records for every (layer, subject) fit.

    Args:
        params: Model parameters
        corpus: Stimulus corpus
        layout: TR layout
        tokenizer: Tokenizer matching the model vocabulary
        fits: (layer, subject) -> BrainFit
        keys: TRs to attribute
        settings: Context, delay and method settings
        jobs: Worker cap (0 = automatic)
        progress_callback: Forwarded to run_parallel

    Returns:
        Records sorted by (task, method, layer, subject, run, tr)
    """
    units = [_Unit("nwp", key) for key in keys]
    for (layer, subject), fit in sorted(fits.items()):
        for key in keys:
            if fit.target_for(key) is None:
                logger.warning(f"TR {key} has no design row for layer {layer}, subject {subject}; skipped")
                continue
            units.append(_Unit("brain", key, layer, subject))

    workers = resolve_workers(jobs, len(units))
    chunks = [c for c in np.array_split(np.arange(len(units)), max(1, workers * 4)) if c.size]
    payloads = [
        (params, corpus, layout, tokenizer, fits, settings, [units[i] for i in chunk])
        for chunk in chunks
    ]
    logger.info(f"Running {len(units)} attributions ({settings.method}) with {workers} workers")
    results = run_parallel(_run_units, payloads, workers, progress_callback=progress_callback)
    records = [record for chunk in results for record in chunk]
    return sorted(records, key=lambda r: r.target.sort_key())
