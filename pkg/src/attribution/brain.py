"""
Brain-alignment attribution.

For TR t the loss is rebuilt end to end from input token embeddings: every word presented in
TRs t..t-D+1 gets its own context, the context is run through the representation, the final
word's token states are averaged, word embeddings are averaged per TR, the per-delay heads map
each TR embedding into voxel space and sum to the prediction, and the loss is the mean squared
error against the fold-standardized response of TR t.
"""

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from ..autodiff import Tape, Tensor, ops
from ..encoders.cross_validation import DelayHead
from ..errors import RejectedInputError
from ..models.toy_lm import Representation
from ..stimulus.corpus import Corpus
from ..stimulus.pipeline import TokenizedContext, TRKey, TRLayout, build_context, tokenize_context
from ..stimulus.tokenizer import SubwordTokenizer
from .methods import attribute
from .records import AttributionRecord, AttributionTarget, make_record


@dataclass(frozen=True)
class ExtendedContext:
    """All words that can influence the prediction for one TR."""
    key: TRKey
    delay_words: Tuple[Tuple[int, ...], ...]
    targets: Tuple[int, ...]
    contexts: Tuple[TokenizedContext, ...]
    first: int
    last: int

    @property
    def word_indices(self) -> range:
        return range(self.first, self.last + 1)


def extended_context(
    corpus: Corpus,
    layout: TRLayout,
    tokenizer: SubwordTokenizer,
    key: TRKey,
    context_words: int,
    delays: int,
    max_positions: int
) -> ExtendedContext:
    """Contexts of every word feeding the D delayed TR embeddings of key."""
    delay_words = tuple(layout.effective_words(past) for past in layout.delay_keys(key, delays))
    targets = tuple(sorted({w for words in delay_words for w in words}))
    contexts = tuple(
        tokenize_context(corpus, build_context(w, context_words), tokenizer, max_positions)
        for w in targets
    )
    first = min(c.context.members[0] for c in contexts)
    return ExtendedContext(key, delay_words, targets, contexts, first, max(targets))


def prediction_graph(
    representation: Representation,
    extended: ExtendedContext,
    heads: Sequence[DelayHead],
    tape: Tape,
    leaves: List[Tensor]
) -> Tensor:
    """(1, V) predicted response built from one (T_c, H) leaf per context."""
    word_vectors: Dict[int, Tensor] = {}
    for word, leaf, tokenized in zip(extended.targets, leaves, extended.contexts):
        states = representation(tape, leaf)
        start, end = tokenized.final_span
        final_tokens = ops.take(states, np.arange(start, end), axis=0)
        word_vectors[word] = ops.mean(final_tokens, axis=0, keepdims=True)
    prediction = None
    for words, head in zip(extended.delay_words, heads):
        tr_vector = ops.mean(ops.concat([word_vectors[w] for w in words], axis=0), axis=0, keepdims=True)
        standardized = ops.mul(ops.sub(tr_vector, head.mean), 1.0 / head.scale)
        part = standardized @ head.weights
        prediction = part if prediction is None else ops.add(prediction, part)
    return prediction


def predict_tr(
    representation: Representation,
    embed_table: np.ndarray,
    extended: ExtendedContext,
    heads: Sequence[DelayHead]
) -> np.ndarray:
    """Standardized-space prediction (V,) for an extended context, no gradients."""
    tape = Tape()
    leaves = [tape.constant(embed_table[c.token_ids]) for c in extended.contexts]
    return np.array(prediction_graph(representation, extended, heads, tape, leaves).value[0])


def brain_loss_function(
    representation: Representation,
    extended: ExtendedContext,
    heads: Sequence[DelayHead],
    target_response: np.ndarray
):
    """Loss fn(tape, leaves) with one (T_c, H) leaf per context in extended.contexts."""
    target_row = np.asarray(target_response, dtype=np.float64)[None, :]

    def loss_fn(tape: Tape, leaves: List[Tensor]) -> Tensor:
        prediction = prediction_graph(representation, extended, heads, tape, leaves)
        return ops.mse(prediction, target_row)

    return loss_fn


def aggregate_word_scores(extended: ExtendedContext, token_scores: Sequence[np.ndarray]) -> Dict[int, float]:
    """Sum token scores per word, then across every context a word appears in."""
    scores = {w: 0.0 for w in extended.word_indices}
    for tokenized, per_token in zip(extended.contexts, token_scores):
        for word, (start, end) in zip(tokenized.context.members, tokenized.spans):
            scores[word] += float(per_token[start:end].sum())
    return scores


def attribute_brain_tr(
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
    method: str = "gxi",
    ig_steps: int = 20,
    layer: int = 0,
    subject: int = 0,
    ig_rule: str = "right"
) -> AttributionRecord:
    """Attribute the brain-prediction MSE of one TR to the words of its extended context.

    Args:
        representation: Maps a (T, H) embedding tensor to (T, H) layer states
        embed_table: (vocab_size, H) token embedding table
        corpus: Stimulus corpus
        layout: TR layout of the corpus
        tokenizer: Tokenizer matching embed_table
        heads: Per-delay heads g_0..g_{D-1} of the fold holding this TR out
        target_response: (V,) fold-standardized response of the TR
        key: (run, tr) of the TR
        context_words: Context length L
        max_positions: Model position limit
        method: gxi or ig
        ig_steps: IG interpolation steps
        layer: Layer id recorded on the target
        subject: Subject id recorded on the target
        ig_rule: IG integration rule, right or trapezoid

    Returns:
        AttributionRecord over the extended context
    """
    target = AttributionTarget("brain", key[0], key[1], method, ig_steps, layer, subject)
    if len(heads) < 1:
        raise RejectedInputError("At least one delay head is required")
    extended = extended_context(corpus, layout, tokenizer, key, context_words, len(heads), max_positions)
    inputs = [embed_table[c.token_ids] for c in extended.contexts]
    loss_fn = brain_loss_function(representation, extended, heads, target_response)
    result = attribute(loss_fn, inputs, method, ig_steps, ig_rule)
    scores = aggregate_word_scores(extended, result.token_scores)
    return make_record(target, scores, extended.last, result.loss)
