"""
Stimulus pipeline: word contexts, tokenization, and token -> word -> TR -> delayed design rows.

Each word w gets a context of up to L words ending at w. The context is run through the model,
the hidden states of w's own tokens are averaged into a word embedding, word embeddings are
averaged per TR, and each design row stacks the current TR with its D-1 predecessors in the same
run: [e_t, e_{t-1}, ..., e_{t-D+1}].
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.worker_management import resolve_workers, run_parallel
from ..errors import InternalConsistencyError, RejectedInputError
from ..models.toy_lm import ModelParams, forward
from ..utils.file_utils import load_container, save_container
from ..utils.logger import app_logger as logger
from .corpus import Corpus
from .tokenizer import SubwordTokenizer

TRKey = Tuple[int, int]

DESIGN_KIND = "design_matrix"


@dataclass(frozen=True)
class Context:
    target: int
    members: Tuple[int, ...]


def build_context(target: int, context_words: int) -> Context:
    start = max(0, target - context_words + 1)
    return Context(target=target, members=tuple(range(start, target + 1)))


def corpus_token_stream(corpus: Corpus, tokenizer: SubwordTokenizer) -> np.ndarray:
    """The whole corpus as one token-id stream, the LM training text."""
    ids, _ = tokenizer.tokenize_words(corpus.surfaces)
    return np.asarray(ids, dtype=np.int64)


def build_contexts(corpus: Corpus, context_words: int) -> List[Context]:
    """One left-truncated context of at most L words per corpus word.

    Contexts run across run boundaries; the text stream is continuous.
    """
    if context_words < 1:
        raise RejectedInputError(f"Context length must be >= 1, got {context_words}")
    if len(corpus.words) == 0:
        raise RejectedInputError("Corpus has no words")
    return [build_context(i, context_words) for i in range(len(corpus.words))]


@dataclass(frozen=True)
class TokenizedContext:
    context: Context
    token_ids: np.ndarray
    spans: Tuple[Tuple[int, int], ...]

    @property
    def final_span(self) -> Tuple[int, int]:
        return self.spans[-1]


def tokenize_context(
    corpus: Corpus,
    context: Context,
    tokenizer: SubwordTokenizer,
    max_positions: Optional[int] = None
) -> TokenizedContext:
    surfaces = [corpus.words[i].surface for i in context.members]
    ids, spans = tokenizer.tokenize_words(surfaces)
    if max_positions is not None and len(ids) > max_positions:
        excess = len(ids) - max_positions
        raise RejectedInputError(
            f"Context of word {context.target} needs {len(ids)} tokens but max_positions is "
            f"{max_positions}; shorten the context by at least {excess} tokens"
        )
    return TokenizedContext(context, np.asarray(ids, dtype=np.int64), tuple(spans))


def word_embedding(states: np.ndarray, tokenized: TokenizedContext) -> np.ndarray:
    """Mean hidden state over the final word's tokens.

    Args:
        states: (T, H) hidden states of the tokenized context
        tokenized: Context with token spans

    Returns:
        (H,) word embedding
    """
    start, end = tokenized.final_span
    if states.ndim != 2 or states.shape[0] != len(tokenized.token_ids) or end != states.shape[0] or start >= end:
        raise InternalConsistencyError(
            f"Token/word alignment mismatch for word {tokenized.context.target}: "
            f"{states.shape[0] if states.ndim else 0} states, final span {tokenized.final_span}"
        )
    return states[start:end].mean(axis=0)


def tr_embedding(word_embeddings: np.ndarray) -> np.ndarray:
    """Mean of the word embeddings of one TR, shape (n_words, H) -> (H,)."""
    word_embeddings = np.asarray(word_embeddings, dtype=np.float64)
    if word_embeddings.ndim != 2 or word_embeddings.shape[0] == 0:
        raise RejectedInputError("TR embedding needs at least one word embedding")
    return word_embeddings.mean(axis=0)


@dataclass(frozen=True)
class TRLayout:
    """Every (run, tr) of a corpus with the words presented during it."""
    keys: Tuple[TRKey, ...]
    words: Tuple[Tuple[int, ...], ...]

    def index(self, key: TRKey) -> int:
        try:
            return self._positions[key]
        except KeyError:
            raise RejectedInputError(f"TR {key} does not exist in this corpus")

    @property
    def _positions(self) -> Dict[TRKey, int]:
        cached = self.__dict__.get("_position_cache")
        if cached is None:
            cached = {key: i for i, key in enumerate(self.keys)}
            object.__setattr__(self, "_position_cache", cached)
        return cached

    def source(self, key: TRKey) -> TRKey:
        """TR whose words stand in for key: itself, else the previous non-empty TR of the run,
        else (for a leading empty TR) the next non-empty one."""
        i = self.index(key)
        if self.words[i]:
            return key
        run = key[0]
        for j in range(i - 1, -1, -1):
            if self.keys[j][0] != run:
                break
            if self.words[j]:
                return self.keys[j]
        for j in range(i + 1, len(self.keys)):
            if self.keys[j][0] != run:
                break
            if self.words[j]:
                return self.keys[j]
        raise InternalConsistencyError(f"Run {run} has no words")

    def effective_words(self, key: TRKey) -> Tuple[int, ...]:
        return self.words[self.index(self.source(key))]

    def delay_keys(self, key: TRKey, delays: int) -> List[TRKey]:
        """[t, t-1, ..., t-D+1] within the run of key."""
        run, tr = key
        self.index(key)
        if tr < delays - 1:
            raise RejectedInputError(
                f"TR {key} lacks delay history: needs {delays - 1} earlier TRs in run {run}"
            )
        return [(run, tr - d) for d in range(delays)]

    def design_keys(self, delays: int) -> List[TRKey]:
        return [key for key in self.keys if key[1] >= delays - 1]


def tr_layout(corpus: Corpus) -> TRLayout:
    keys: List[TRKey] = []
    words: List[Tuple[int, ...]] = []
    for run, (start, end) in enumerate(corpus.runs):
        per_tr: List[List[int]] = [[] for _ in range(corpus.n_trs(run))]
        for i in range(start, end):
            per_tr[corpus.words[i].tr_index].append(i)
        for tr, members in enumerate(per_tr):
            keys.append((run, tr))
            words.append(tuple(members))
    return TRLayout(tuple(keys), tuple(words))


def tr_embeddings(layout: TRLayout, word_embeddings: np.ndarray) -> np.ndarray:
    """(n_trs, H) TR embeddings; empty TRs reuse their source TR's embedding."""
    empty = [key for key, members in zip(layout.keys, layout.words) if not members]
    if empty:
        logger.warning(f"{len(empty)} TRs contain no words and reuse a neighbouring TR embedding")
    return np.stack([
        tr_embedding(word_embeddings[list(layout.effective_words(key))])
        for key in layout.keys
    ])


@dataclass(frozen=True)
class DesignMatrix:
    """Delay-concatenated design rows for one layer."""
    values: np.ndarray
    delays: int
    row_keys: np.ndarray
    layer: Optional[int] = None

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] % self.delays != 0:
            raise InternalConsistencyError(
                f"Design of shape {self.values.shape} is not a multiple of {self.delays} delays"
            )
        if self.row_keys.shape != (self.values.shape[0], 2):
            raise InternalConsistencyError("Design rows and row keys disagree")
        if not np.isfinite(self.values).all():
            raise InternalConsistencyError("Design matrix contains non-finite values")

    @property
    def hidden_size(self) -> int:
        return self.values.shape[1] // self.delays

    def keys(self) -> List[TRKey]:
        return [(int(run), int(tr)) for run, tr in self.row_keys]

    def row_of(self, key: TRKey) -> int:
        matches = np.flatnonzero((self.row_keys[:, 0] == key[0]) & (self.row_keys[:, 1] == key[1]))
        if matches.size == 0:
            raise RejectedInputError(f"TR {key} has no design row")
        return int(matches[0])


def delay_concatenate(
    tr_embeddings_: np.ndarray,
    layout: TRLayout,
    delays: int = 4,
    layer: Optional[int] = None
) -> DesignMatrix:
    """Stack each TR with its D-1 predecessors; the first D-1 TRs of every run are dropped.

    Args:
        tr_embeddings_: (n_trs, H) embeddings aligned with layout.keys
        layout: TR layout of the corpus
        delays: Delay depth D
        layer: Layer id recorded on the design

    Returns:
        DesignMatrix with D*H columns
    """
    if delays < 1:
        raise RejectedInputError(f"Delay depth must be >= 1, got {delays}")
    if tr_embeddings_.shape[0] != len(layout.keys):
        raise InternalConsistencyError("TR embeddings do not match the TR layout")
    hidden = tr_embeddings_.shape[1]
    runs = sorted({run for run, _ in layout.keys})
    for run in runs:
        n_trs = sum(1 for r, _ in layout.keys if r == run)
        if n_trs < delays:
            logger.warning(f"Run {run} has {n_trs} TRs, fewer than {delays} delays; it contributes no rows")

    keys = layout.design_keys(delays)
    values = np.empty((len(keys), delays * hidden))
    for row, key in enumerate(keys):
        for d, past in enumerate(layout.delay_keys(key, delays)):
            values[row, d * hidden:(d + 1) * hidden] = tr_embeddings_[layout.index(past)]
    row_keys = np.asarray(keys, dtype=np.int64).reshape(len(keys), 2)
    return DesignMatrix(values=values, delays=delays, row_keys=row_keys, layer=layer)


def _context_states(payload) -> np.ndarray:
    params, tokenized_contexts, layers = payload
    out = np.empty((len(tokenized_contexts), len(layers), params.config.hidden_size))
    for i, tokenized in enumerate(tokenized_contexts):
        states, _ = forward(params, tokenized.token_ids)
        for j, layer in enumerate(layers):
            out[i, j] = word_embedding(states[layer], tokenized)
    return out


def compute_word_embeddings(
    params: ModelParams,
    corpus: Corpus,
    tokenizer: SubwordTokenizer,
    context_words: int,
    layers: Sequence[int],
    jobs: int = 1,
    progress_callback=None
) -> Dict[int, np.ndarray]:
    """Word embeddings (N, H) per requested layer, one forward pass per context.

    Args:
        params: Model parameters
        corpus: Stimulus corpus
        tokenizer: Tokenizer matching the model vocabulary
        context_words: Context length L
        layers: Layer ids to collect
        jobs: Worker cap (0 = automatic)
        progress_callback: Forwarded to run_parallel

    Returns:
        Mapping layer -> (N, H) array ordered by word_index
    """
    layers = list(layers)
    tokenized = [
        tokenize_context(corpus, context, tokenizer, params.config.max_positions)
        for context in build_contexts(corpus, context_words)
    ]
    workers = resolve_workers(jobs, len(tokenized))
    chunks = np.array_split(np.arange(len(tokenized)), max(1, workers * 4))
    payloads = [(params, [tokenized[i] for i in chunk], layers) for chunk in chunks if chunk.size]
    logger.info(f"Embedding {len(tokenized)} contexts at layers {layers} with {workers} workers")
    results = run_parallel(_context_states, payloads, workers, progress_callback=progress_callback)
    stacked = np.concatenate(results, axis=0)
    return {layer: stacked[:, j, :] for j, layer in enumerate(layers)}


def build_design_matrices(
    params: ModelParams,
    corpus: Corpus,
    tokenizer: SubwordTokenizer,
    context_words: int,
    delays: int,
    layers: Sequence[int],
    jobs: int = 1,
    progress_callback=None
) -> Dict[int, DesignMatrix]:
    layout = tr_layout(corpus)
    embeddings = compute_word_embeddings(
        params, corpus, tokenizer, context_words, layers, jobs, progress_callback
    )
    return {
        layer: delay_concatenate(tr_embeddings(layout, embeddings[layer]), layout, delays, layer)
        for layer in layers
    }


def save_design(path: str, design: DesignMatrix) -> None:
    header = {"delays": design.delays, "layer": design.layer, "hidden_size": design.hidden_size}
    save_container(path, DESIGN_KIND, header, {"row_keys": design.row_keys, "values": design.values})


def load_design(path: str) -> DesignMatrix:
    header, arrays = load_container(path, DESIGN_KIND)
    return DesignMatrix(
        values=arrays["values"],
        delays=int(header["delays"]),
        row_keys=arrays["row_keys"].astype(np.int64),
        layer=header.get("layer")
    )
