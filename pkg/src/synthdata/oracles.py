"""
Brute-force oracles for gradient attributions.
"""

from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy import stats

from ..attribution.brain import ExtendedContext, brain_loss_function, extended_context
from ..attribution.methods import evaluate
from ..attribution.records import AttributionRecord
from ..core.worker_management import resolve_workers, run_parallel
from ..encoders.cross_validation import DelayHead
from ..models.toy_lm import Representation
from ..stimulus.corpus import Corpus
from ..stimulus.pipeline import TRKey, TRLayout
from ..stimulus.tokenizer import SubwordTokenizer


def _zeroed_inputs(extended: ExtendedContext, embed_table: np.ndarray, word: int) -> List[np.ndarray]:
    inputs = []
    for tokenized in extended.contexts:
        rows = embed_table[tokenized.token_ids].copy()
        for member, (start, end) in zip(tokenized.context.members, tokenized.spans):
            if member == word:
                rows[start:end] = 0.0
        inputs.append(rows)
    return inputs


def _loo_chunk(payload) -> List[float]:
    representation, embed_table, extended, heads, target, words, base = payload
    loss_fn = brain_loss_function(representation, extended, heads, target)
    return [evaluate(loss_fn, _zeroed_inputs(extended, embed_table, w)) - base for w in words]


def brute_force_word_importance(
    representation: Representation,
    embed_table: np.ndarray,
    corpus: Corpus,
    layout: TRLayout,
    tokenizer: SubwordTokenizer,
    heads: Sequence[DelayHead],
    target_response: np.ndarray,
    key: TRKey,
    context_words: int,
    max_positions: int,
    words: Optional[Iterable[int]] = None,
    jobs: int = 1
) -> Dict[int, float]:
    """Leave-one-out loss change per word: the TR loss with that word's token embeddings
    zeroed in every context, minus the intact loss.

    Args:
        representation: Representation the heads were fitted on
        embed_table: Token embedding table
        corpus: Stimulus corpus
        layout: TR layout
        tokenizer: Tokenizer matching embed_table
        heads: Per-delay heads of the fold holding key out
        target_response: (V,) fold-standardized response of key
        key: (run, tr)
        context_words: Context length L
        max_positions: Model position limit
        words: Word indices to knock out (default: the extended context)
        jobs: Worker cap (0 = automatic)

    Returns:
        word_index -> delta; words outside the extended context get 0
    """
    extended = extended_context(corpus, layout, tokenizer, key, context_words, len(heads), max_positions)
    loss_fn = brain_loss_function(representation, extended, heads, target_response)
    base = evaluate(loss_fn, [embed_table[c.token_ids] for c in extended.contexts])

    requested = list(extended.word_indices) if words is None else sorted(set(words))
    inside = [w for w in requested if extended.first <= w <= extended.last]
    workers = resolve_workers(jobs, len(inside))
    chunks = [c for c in np.array_split(np.asarray(inside, dtype=np.int64), max(1, workers)) if c.size]
    payloads = [
        (representation, embed_table, extended, list(heads), target_response, [int(w) for w in chunk], base)
        for chunk in chunks
    ]
    deltas = [d for part in run_parallel(_loo_chunk, payloads, workers) for d in part]
    result = {w: 0.0 for w in requested}
    result.update(zip(inside, deltas))
    return result


def rank_agreement(record: AttributionRecord, deltas: Dict[int, float]) -> float:
    """Spearman correlation of |score| against |leave-one-out delta| over the record's words."""
    scores = np.abs(record.score)
    reference = np.abs([deltas.get(int(w), 0.0) for w in record.word_index])
    rho, _ = stats.spearmanr(scores, reference)
    return float(rho)


def designated_share(record: AttributionRecord, word: int) -> float:
    """Fraction of the record's |score| mass on one word."""
    mass = np.abs(record.score)
    total = float(mass.sum())
    if total <= 0:
        return 0.0
    return float(mass[record.word_index == word].sum() / total)
