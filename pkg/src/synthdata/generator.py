"""
Synthetic stimuli and brain responses with a known ground truth.

The corpus comes from a small finite-state grammar of template sentences over content and
function word classes. Annotations are drawn from seeded generators: semantic features sit on
content word types, syntactic features follow the word class, discourse features mark sentence
openings and pronouns.

Responses are linear in a "truth" design built the same way the real pipeline builds one, but
from a seeded token-embedding table passed straight through (layer state = input embedding):

    word embedding  mean of the truth rows of the word's tokens
    TR embedding    mean of its word embeddings
    design X*       the TR embedding and its D-1 predecessors, concatenated
    responses       Y = X* W* + noise, with W* and noise drawn per subject

In planted mode each TR holds one designated signal word among function-word fillers, filler
tokens have all-zero truth rows, and W* is zero outside the delay-0 block, so each TR's
response is driven by its designated word alone.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..encoders.cross_validation import ResponseMatrix
from ..errors import RejectedInputError
from ..stimulus.corpus import CATEGORIES, AnnotationSet, Corpus
from ..stimulus.pipeline import DesignMatrix, delay_concatenate, tr_embeddings, tr_layout
from ..stimulus.tokenizer import SubwordTokenizer
from ..utils.logger import app_logger as logger

WORD_CLASSES: Dict[str, Tuple[str, ...]] = {
    "DET": ("the", "a", "this", "that", "every"),
    "NOUN": ("wizard", "owl", "castle", "wand", "letter", "forest", "dragon", "friend",
             "book", "door", "garden", "teacher", "window", "river", "lantern", "student"),
    "VERB": ("saw", "found", "opened", "carried", "watched", "followed", "remembered",
             "feared", "painted", "answered", "guarded", "crossed"),
    "ADJ": ("old", "dark", "small", "bright", "quiet", "strange", "golden", "broken"),
    "PREP": ("near", "behind", "under", "inside", "across"),
    "CONJ": ("and", "but", "then", "while"),
    "PRON": ("he", "she", "they", "it"),
}
CONTENT_CLASSES = ("NOUN", "VERB", "ADJ")

TEMPLATES: Tuple[Tuple[str, ...], ...] = (
    ("DET", "ADJ", "NOUN", "VERB", "DET", "NOUN"),
    ("PRON", "VERB", "DET", "NOUN", "PREP", "DET", "NOUN"),
    ("DET", "NOUN", "VERB", "CONJ", "PRON", "VERB"),
    ("DET", "NOUN", "PREP", "DET", "ADJ", "NOUN", "VERB"),
    ("PRON", "VERB", "DET", "ADJ", "NOUN"),
)

FILLER_WORDS = ("the", "a", "of", "and", "to", "in", "is", "on")
SIGNAL_WORDS = tuple(w for c in CONTENT_CLASSES for w in WORD_CLASSES[c])

# probability that a content word type carries a semantic feature / a sentence opener a discourse feature
SEMANTIC_RATE = 0.75
DISCOURSE_RATE = 0.5


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings. W* is not stored; it is redrawn from (seed, subject)."""
    n_words: int = 480
    n_runs: int = 2
    n_voxels: int = 16
    n_subjects: int = 1
    noise_std: float = 0.5
    delays: int = 4
    truth_hidden: int = 8
    vocab_size: int = 512
    planted: bool = False
    n_semantic: int = 8
    n_syntactic: int = 6
    n_discourse: int = 4
    tr_duration_s: float = 2.0
    word_duration_s: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_runs < 1 or self.n_voxels < 1 or self.n_subjects < 1 or self.truth_hidden < 1:
            raise RejectedInputError("Runs, voxels, subjects and truth_hidden must be positive")
        if self.noise_std < 0:
            raise RejectedInputError(f"noise_std must be >= 0, got {self.noise_std}")
        needed = 4 * self.delays * self.words_per_tr
        if self.n_words < needed:
            raise RejectedInputError(
                f"n_words={self.n_words} is too short: {4 * self.delays} TRs ({needed} words) are required"
            )

    @property
    def words_per_tr(self) -> int:
        return max(1, int(round(self.tr_duration_s / self.word_duration_s)))

    @classmethod
    def from_config(cls, config) -> "SyntheticSpec":
        s = config.synthetic
        return cls(
            n_words=s.n_words,
            n_runs=s.n_runs,
            n_voxels=s.n_voxels,
            n_subjects=s.n_subjects,
            noise_std=s.noise_std,
            delays=config.pipeline.delays,
            vocab_size=config.model.vocab_size,
            planted=s.planted,
            n_semantic=s.n_semantic,
            n_syntactic=s.n_syntactic,
            n_discourse=s.n_discourse,
            tr_duration_s=config.pipeline.tr_duration_s,
            word_duration_s=config.pipeline.word_duration_s,
            seed=s.seed
        )


@dataclass(frozen=True)
class SyntheticData:
    corpus: Corpus
    truth_table: np.ndarray
    planted_words: Tuple[int, ...] = field(default=())


def vocabularies(spec: SyntheticSpec) -> Dict[str, Tuple[str, ...]]:
    sizes = {"semantic": spec.n_semantic, "syntactic": spec.n_syntactic, "discourse": spec.n_discourse}
    return {name: tuple(f"{name}_{i}" for i in range(sizes[name])) for name in CATEGORIES}


def _run_lengths(spec: SyntheticSpec) -> List[int]:
    """Contiguous run sizes summing to n_words, each a whole number of TRs where possible."""
    per_tr = spec.words_per_tr
    total_trs = spec.n_words // per_tr
    if total_trs < spec.n_runs * spec.delays:
        raise RejectedInputError(f"{spec.n_runs} runs of at least {spec.delays} TRs do not fit in {spec.n_words} words")
    lengths = [len(chunk) * per_tr for chunk in np.array_split(np.arange(total_trs), spec.n_runs)]
    lengths[-1] += spec.n_words - sum(lengths)
    return lengths


class _Annotator:
    """Seeded annotation draws: semantic per word type, syntactic per class, discourse per token."""

    def __init__(self, spec: SyntheticSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.semantic: Dict[str, frozenset] = {}
        classes = sorted(WORD_CLASSES)
        self.syntactic = {name: i % spec.n_syntactic for i, name in enumerate(classes)}
        self.word_class = {w: c for c in classes for w in WORD_CLASSES[c]}

    def _semantic(self, surface: str) -> frozenset:
        if surface not in self.semantic:
            content = self.word_class.get(surface) in CONTENT_CLASSES
            draw = self.rng.random() < SEMANTIC_RATE
            self.semantic[surface] = (
                frozenset({int(self.rng.integers(self.spec.n_semantic))}) if content and draw else frozenset()
            )
        return self.semantic[surface]

    def annotate(self, surface: str, opens_sentence: bool) -> AnnotationSet:
        word_class = self.word_class.get(surface)
        syntactic = frozenset() if word_class is None else frozenset({self.syntactic[word_class]})
        discourse = set()
        if word_class == "PRON":
            discourse.add(0)
        if opens_sentence and self.rng.random() < DISCOURSE_RATE:
            discourse.add(int(self.rng.integers(self.spec.n_discourse)))
        return AnnotationSet(self._semantic(surface), syntactic, frozenset(discourse))


def _grammar_run(length: int, rng: np.random.Generator, annotator: _Annotator):
    surfaces, annotations = [], []
    while len(surfaces) < length:
        template = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
        for position, word_class in enumerate(template):
            if len(surfaces) == length:
                break
            options = WORD_CLASSES[word_class]
            surface = options[int(rng.integers(len(options)))]
            surfaces.append(surface)
            annotations.append(annotator.annotate(surface, position == 0))
    return surfaces, annotations


def usable_signal_words(tokenizer: SubwordTokenizer) -> Tuple[str, ...]:
    """Signal words sharing no token id with any filler word."""
    filler_ids = {t for w in FILLER_WORDS for t in tokenizer.tokenize(w)}
    usable = tuple(w for w in SIGNAL_WORDS if not filler_ids & set(tokenizer.tokenize(w)))
    dropped = len(SIGNAL_WORDS) - len(usable)
    if dropped:
        logger.debug(f"Dropped {dropped} signal words whose tokens collide with filler tokens")
    if not usable:
        raise RejectedInputError("Every signal word collides with a filler token at this vocab size")
    return usable


def _planted_run(length: int, per_tr: int, signals: Sequence[str], rng: np.random.Generator, annotator: _Annotator):
    surfaces, annotations, designated = [], [], []
    for start in range(0, length, per_tr):
        size = min(per_tr, length - start)
        slot = int(rng.integers(size))
        for i in range(size):
            if i == slot:
                surface = signals[int(rng.integers(len(signals)))]
                designated.append(start + i)
            else:
                surface = FILLER_WORDS[int(rng.integers(len(FILLER_WORDS)))]
            surfaces.append(surface)
            annotations.append(annotator.annotate(surface, i == 0))
    return surfaces, annotations, designated


def truth_table(spec: SyntheticSpec, tokenizer: SubwordTokenizer) -> np.ndarray:
    """(vocab_size, truth_hidden) table; in planted mode only signal-word tokens are nonzero."""
    rng = np.random.default_rng([spec.seed, 7])
    table = rng.standard_normal((spec.vocab_size, spec.truth_hidden))
    if spec.planted:
        keep = np.zeros(spec.vocab_size, dtype=bool)
        for word in usable_signal_words(tokenizer):
            keep[tokenizer.tokenize(word)] = True
        table[~keep] = 0.0
    return table


def gen_corpus(spec: SyntheticSpec, tokenizer: Optional[SubwordTokenizer] = None) -> SyntheticData:
    """Deterministic annotated corpus (and truth table) for a spec.

    Args:
        spec: Generator settings
        tokenizer: Tokenizer the truth table is laid out for

    Returns:
        SyntheticData with the corpus, truth table and, in planted mode, designated word indices
    """
    tokenizer = tokenizer or SubwordTokenizer(spec.vocab_size)
    if tokenizer.vocab_size != spec.vocab_size:
        raise RejectedInputError("Tokenizer vocabulary does not match the generator settings")
    rng = np.random.default_rng([spec.seed, 0])
    annotator = _Annotator(spec, np.random.default_rng([spec.seed, 1]))
    signals = usable_signal_words(tokenizer) if spec.planted else ()

    runs, annotations, planted = [], [], []
    offset = 0
    for length in _run_lengths(spec):
        if spec.planted:
            surfaces, notes, designated = _planted_run(length, spec.words_per_tr, signals, rng, annotator)
            planted.extend(offset + i for i in designated)
        else:
            surfaces, notes = _grammar_run(length, rng, annotator)
        runs.append(surfaces)
        annotations.append(notes)
        offset += length

    corpus = Corpus.from_runs(runs, annotations, spec.tr_duration_s, spec.word_duration_s, vocabularies(spec))
    logger.info(
        f"Generated {len(corpus)} words in {len(runs)} runs"
        + (f" with {len(planted)} designated words" if spec.planted else "")
    )
    return SyntheticData(corpus, truth_table(spec, tokenizer), tuple(planted))


def truth_word_embeddings(corpus: Corpus, tokenizer: SubwordTokenizer, table: np.ndarray) -> np.ndarray:
    """(N, H) mean truth row of each word's tokens."""
    return np.stack([table[tokenizer.tokenize(word.surface)].mean(axis=0) for word in corpus.words])


def truth_design(spec: SyntheticSpec, data: SyntheticData, tokenizer: SubwordTokenizer) -> DesignMatrix:
    layout = tr_layout(data.corpus)
    embeddings = truth_word_embeddings(data.corpus, tokenizer, data.truth_table)
    return delay_concatenate(tr_embeddings(layout, embeddings), layout, spec.delays)


def true_weights(spec: SyntheticSpec, subject: int) -> np.ndarray:
    """(D*H, V) ground-truth map of a subject; planted mode keeps only the delay-0 block."""
    rng = np.random.default_rng([spec.seed, subject, 0])
    rows = spec.delays * spec.truth_hidden
    weights = rng.standard_normal((rows, spec.n_voxels)) / np.sqrt(rows)
    if spec.planted:
        weights[spec.truth_hidden:] = 0.0
    return weights


def gen_brain_responses(spec: SyntheticSpec, design: DesignMatrix, subject: int = 0) -> ResponseMatrix:
    """Y = X W* + Gaussian noise for one subject, keyed by the design's rows.

    Args:
        spec: Generator settings (noise_std, seed, voxel count)
        design: Truth design matrix
        subject: Subject id; selects W* and the noise stream

    Returns:
        ResponseMatrix aligned with design.row_keys
    """
    weights = true_weights(spec, subject)
    if design.values.shape[1] != weights.shape[0]:
        raise RejectedInputError(
            f"Design has {design.values.shape[1]} columns but W* expects {weights.shape[0]}"
        )
    clean = design.values @ weights
    noise = np.random.default_rng([spec.seed, subject, 1]).standard_normal(clean.shape) * spec.noise_std
    return ResponseMatrix(values=clean + noise, row_keys=design.row_keys.copy(), subject=subject)


def generate(spec: SyntheticSpec, tokenizer: Optional[SubwordTokenizer] = None):
    """Corpus plus one response matrix per subject."""
    tokenizer = tokenizer or SubwordTokenizer(spec.vocab_size)
    data = gen_corpus(spec, tokenizer)
    design = truth_design(spec, data, tokenizer)
    responses = [gen_brain_responses(spec, design, s) for s in range(spec.n_subjects)]
    return data, responses
