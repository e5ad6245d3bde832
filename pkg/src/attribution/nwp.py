"""
Next-word-prediction attribution.

The extended context of TR t (every word any of its D delayed contexts can see) is followed by
the next word of the corpus. That word's tokens are predicted with teacher forcing and the loss
is the mean cross-entropy over them. Only the context token embeddings are attributed; the
teacher-forced prefix of the target word enters as constants.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..autodiff import ops
from ..errors import RejectedInputError
from ..models.toy_lm import ModelParams, next_token_logits
from ..stimulus.corpus import Corpus
from ..stimulus.pipeline import TRKey, TRLayout
from ..stimulus.tokenizer import SubwordTokenizer
from .brain import extended_context
from .methods import attribute, evaluate
from .records import AttributionRecord, AttributionTarget, make_record


def nwp_loss_function(params: ModelParams, context_length: int, target_ids: np.ndarray):
    """Loss fn(tape, [context leaf]) = mean CE of target_ids after the context."""
    embed = params.arrays["embed"]
    prefix = embed[target_ids[:-1]]
    positions = np.arange(context_length - 1, context_length + len(target_ids) - 1)

    def loss_fn(tape, leaves):
        sequence = leaves[0]
        if len(prefix):
            sequence = ops.concat([sequence, tape.constant(prefix)], axis=0)
        logits = next_token_logits(params, tape, sequence)
        return ops.cross_entropy(ops.take(logits, positions, axis=0), target_ids)

    return loss_fn


@dataclass(frozen=True)
class NWPProblem:
    """Tokenized extended context of a TR followed by the next word's token ids."""
    members: Tuple[int, ...]
    token_ids: np.ndarray
    spans: Tuple[Tuple[int, int], ...]
    target_ids: np.ndarray
    last: int


def nwp_problem(
    params: ModelParams,
    corpus: Corpus,
    layout: TRLayout,
    tokenizer: SubwordTokenizer,
    key: TRKey,
    context_words: int,
    delays: int
) -> NWPProblem:
    extended = extended_context(
        corpus, layout, tokenizer, key, context_words, delays, params.config.max_positions
    )
    next_word = extended.last + 1
    if next_word >= len(corpus.words):
        raise RejectedInputError(f"TR {key} ends the corpus; there is no next word to predict")

    members = tuple(extended.word_indices)
    ids, spans = tokenizer.tokenize_words([corpus.words[w].surface for w in members])
    target_ids = np.asarray(tokenizer.tokenize(corpus.words[next_word].surface), dtype=np.int64)
    needed = len(ids) + len(target_ids) - 1
    limit = params.config.max_positions
    if needed > limit:
        raise RejectedInputError(
            f"Extended context of TR {key} needs {needed} positions but max_positions is {limit}; "
            f"truncate at least {needed - limit} leading tokens (reduce context_words)"
        )
    return NWPProblem(members, np.asarray(ids, dtype=np.int64), tuple(spans), target_ids, extended.last)


def nwp_loss(problem: NWPProblem, params: ModelParams) -> float:
    """Teacher-forced next-word cross-entropy without gradients."""
    loss_fn = nwp_loss_function(params, len(problem.token_ids), problem.target_ids)
    return evaluate(loss_fn, [params.arrays["embed"][problem.token_ids]])


def attribute_nwp(
    params: ModelParams,
    corpus: Corpus,
    layout: TRLayout,
    tokenizer: SubwordTokenizer,
    key: TRKey,
    context_words: int,
    delays: int,
    method: str = "gxi",
    ig_steps: int = 20,
    ig_rule: str = "right"
) -> AttributionRecord:
    """Attribute the teacher-forced next-word loss to the words of a TR's extended context.

    Args:
        params: Model parameters
        corpus: Stimulus corpus
        layout: TR layout of the corpus
        tokenizer: Tokenizer matching the model vocabulary
        key: (run, tr) of the TR
        context_words: Context length L
        delays: Number of delays D
        method: gxi or ig
        ig_steps: IG interpolation steps
        ig_rule: IG integration rule, right or trapezoid

    Returns:
        AttributionRecord over the extended context
    """
    target = AttributionTarget("nwp", key[0], key[1], method, ig_steps)
    problem = nwp_problem(params, corpus, layout, tokenizer, key, context_words, delays)
    loss_fn = nwp_loss_function(params, len(problem.token_ids), problem.target_ids)
    inputs = [params.arrays["embed"][problem.token_ids]]
    result = attribute(loss_fn, inputs, method, ig_steps, ig_rule)
    token_scores = result.token_scores[0]
    scores = {w: float(token_scores[start:end].sum()) for w, (start, end) in zip(problem.members, problem.spans)}
    return make_record(target, scores, problem.last, result.loss)
