"""
Corpus model and the line-delimited corpus file format.

File layout (UTF-8, one JSON object per line):

    line 1   header  {"record": "header", "format_version": 1,
                      "tr_duration_s": 2.0, "word_duration_s": 0.5,
                      "vocabularies": {"semantic": [...], "syntactic": [...], "discourse": [...]}}
    line 2+  word    {"surface": "the", "run": 0, "tr_index": 0,
                      "semantic": [ids], "syntactic": [ids], "discourse": [ids]}

Words appear in presentation order; word_index is the 0-based line position among word
records. Run ids start at 0 and increase by one between consecutive runs. tr_index counts TRs
within the run. Annotation ids index into the matching header vocabulary. Any field not listed
above is rejected.
"""

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Mapping, Sequence, Tuple

from ..errors import DependencyError, RejectedInputError
from ..utils.file_utils import atomic_write_text
from ..utils.logger import app_logger as logger

CORPUS_FORMAT_VERSION = 1
CATEGORIES = ("semantic", "syntactic", "discourse")

HEADER_FIELDS = {"record", "format_version", "tr_duration_s", "word_duration_s", "vocabularies"}
WORD_FIELDS = {"surface", "run", "tr_index"} | set(CATEGORIES)


@dataclass(frozen=True)
class AnnotationSet:
    semantic: FrozenSet[int] = frozenset()
    syntactic: FrozenSet[int] = frozenset()
    discourse: FrozenSet[int] = frozenset()

    def category(self, name: str) -> FrozenSet[int]:
        return getattr(self, name)


@dataclass(frozen=True)
class WordRecord:
    surface: str
    word_index: int
    run: int
    tr_index: int
    annotations: AnnotationSet = field(default_factory=AnnotationSet)


def assign_tr(index_in_run: int, word_duration_s: float, tr_duration_s: float) -> int:
    """TR of a word from its onset, floor(index * word_duration / tr_duration)."""
    # tolerance guards against 0.1-style durations landing just below an integer
    return int(math.floor(index_in_run * word_duration_s / tr_duration_s + 1e-9))


@dataclass(frozen=True)
class Corpus:
    """Ordered words split into runs, plus timing and annotation vocabularies."""
    words: Tuple[WordRecord, ...]
    runs: Tuple[Tuple[int, int], ...]
    tr_duration_s: float = 2.0
    word_duration_s: float = 0.5
    vocabularies: Mapping[str, Tuple[str, ...]] = field(
        default_factory=lambda: {name: () for name in CATEGORIES}
    )

    def __post_init__(self):
        if not self.words:
            raise RejectedInputError("Corpus has no words")
        expected_start = 0
        for run_id, (start, end) in enumerate(self.runs):
            if start != expected_start or end <= start:
                raise RejectedInputError(
                    f"Runs must be non-empty, ordered and contiguous; run {run_id} is ({start}, {end})"
                )
            expected_start = end
        if expected_start != len(self.words):
            raise RejectedInputError("Runs do not cover every word")
        for name in CATEGORIES:
            if name not in self.vocabularies:
                raise RejectedInputError(f"Missing annotation vocabulary for {name}")
        previous = None
        for position, word in enumerate(self.words):
            if word.word_index != position:
                raise RejectedInputError(f"Word at position {position} has word_index {word.word_index}")
            start, end = self.runs[word.run] if 0 <= word.run < len(self.runs) else (-1, -1)
            if not start <= position < end:
                raise RejectedInputError(f"Word {position} is not inside its run {word.run}")
            if previous is not None and previous.run == word.run and word.tr_index < previous.tr_index:
                raise RejectedInputError(f"tr_index decreases at word {position}")
            if word.tr_index < 0:
                raise RejectedInputError(f"Negative tr_index at word {position}")
            for name in CATEGORIES:
                size = len(self.vocabularies[name])
                if any(not 0 <= i < size for i in word.annotations.category(name)):
                    raise RejectedInputError(f"Word {position} has {name} ids outside the vocabulary")
            previous = word

    def __len__(self) -> int:
        return len(self.words)

    @property
    def surfaces(self) -> List[str]:
        return [w.surface for w in self.words]

    def n_trs(self, run: int) -> int:
        start, end = self.runs[run]
        return self.words[end - 1].tr_index + 1

    def with_surfaces(self, replacements: Mapping[int, str]) -> "Corpus":
        """Copy with the surfaces at the given word indices swapped; timing and annotations kept."""
        words = tuple(
            replace(word, surface=replacements[word.word_index]) if word.word_index in replacements else word
            for word in self.words
        )
        return replace(self, words=words)

    @classmethod
    def from_runs(
        cls,
        runs: Sequence[Sequence[str]],
        annotations: Sequence[Sequence[AnnotationSet]] = None,
        tr_duration_s: float = 2.0,
        word_duration_s: float = 0.5,
        vocabularies: Mapping[str, Sequence[str]] = None
    ) -> "Corpus":
        """Build a corpus from per-run word lists, assigning TRs from word timing."""
        words: List[WordRecord] = []
        bounds = []
        for run_id, surfaces in enumerate(runs):
            start = len(words)
            for i, surface in enumerate(surfaces):
                annotation = annotations[run_id][i] if annotations is not None else AnnotationSet()
                words.append(WordRecord(
                    surface=surface,
                    word_index=len(words),
                    run=run_id,
                    tr_index=assign_tr(i, word_duration_s, tr_duration_s),
                    annotations=annotation
                ))
            bounds.append((start, len(words)))
        vocabularies = vocabularies or {name: () for name in CATEGORIES}
        return cls(
            words=tuple(words),
            runs=tuple(bounds),
            tr_duration_s=tr_duration_s,
            word_duration_s=word_duration_s,
            vocabularies={name: tuple(vocabularies[name]) for name in CATEGORIES}
        )


def _reject_unknown(record: Mapping, allowed: Iterable[str], line_no: int) -> None:
    unknown = sorted(set(record) - set(allowed))
    if unknown:
        raise RejectedInputError(f"Line {line_no}: unknown fields {unknown}")


def _id_set(value, name: str, line_no: int) -> FrozenSet[int]:
    if not isinstance(value, list) or any(not isinstance(v, int) or isinstance(v, bool) for v in value):
        raise RejectedInputError(f"Line {line_no}: {name} must be a list of integer ids")
    return frozenset(value)


def parse_corpus(lines: Iterable[str]) -> Corpus:
    """Parse corpus file lines (header first)."""
    header = None
    words: List[WordRecord] = []
    bounds: List[List[int]] = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise RejectedInputError(f"Line {line_no}: invalid JSON ({e})")
        if not isinstance(record, dict):
            raise RejectedInputError(f"Line {line_no}: expected a JSON object")

        if header is None:
            if record.get("record") != "header":
                raise RejectedInputError("Corpus file must start with a header record")
            _reject_unknown(record, HEADER_FIELDS, line_no)
            missing = (HEADER_FIELDS - {"vocabularies"}) - set(record)
            if missing:
                raise RejectedInputError(f"Line {line_no}: header is missing fields {sorted(missing)}")
            for name in ("tr_duration_s", "word_duration_s"):
                value = record[name]
                if isinstance(value, bool) or not isinstance(value, (int, float)) or value <= 0:
                    raise RejectedInputError(f"Line {line_no}: {name} must be a positive number, got {value!r}")
            if record.get("format_version") != CORPUS_FORMAT_VERSION:
                raise RejectedInputError(f"Unsupported corpus format_version {record.get('format_version')}")
            vocabularies = record.get("vocabularies", {})
            _reject_unknown(vocabularies, CATEGORIES, line_no)
            header = record
            continue

        _reject_unknown(record, WORD_FIELDS, line_no)
        missing = {"surface", "run", "tr_index"} - set(record)
        if missing:
            raise RejectedInputError(f"Line {line_no}: missing fields {sorted(missing)}")
        run = record["run"]
        if not bounds or bounds[-1][0] != run:
            expected = bounds[-1][0] + 1 if bounds else 0
            if run != expected:
                raise RejectedInputError(f"Line {line_no}: run {run} follows run {expected - 1}")
            bounds.append([run, len(words)])
        annotations = AnnotationSet(**{
            name: _id_set(record.get(name, []), name, line_no) for name in CATEGORIES
        })
        words.append(WordRecord(
            surface=str(record["surface"]),
            word_index=len(words),
            run=run,
            tr_index=int(record["tr_index"]),
            annotations=annotations
        ))

    if header is None:
        raise RejectedInputError("Corpus file is empty")
    runs = []
    for i, (_, start) in enumerate(bounds):
        end = bounds[i + 1][1] if i + 1 < len(bounds) else len(words)
        runs.append((start, end))
    vocabularies = header.get("vocabularies", {})
    return Corpus(
        words=tuple(words),
        runs=tuple(runs),
        tr_duration_s=float(header["tr_duration_s"]),
        word_duration_s=float(header["word_duration_s"]),
        vocabularies={name: tuple(vocabularies.get(name, [])) for name in CATEGORIES}
    )


def corpus_lines(corpus: Corpus) -> List[str]:
    header = {
        "record": "header",
        "format_version": CORPUS_FORMAT_VERSION,
        "tr_duration_s": corpus.tr_duration_s,
        "word_duration_s": corpus.word_duration_s,
        "vocabularies": {name: list(corpus.vocabularies[name]) for name in CATEGORIES},
    }
    lines = [json.dumps(header, sort_keys=True)]
    for word in corpus.words:
        record = {"surface": word.surface, "run": word.run, "tr_index": word.tr_index}
        for name in CATEGORIES:
            record[name] = sorted(word.annotations.category(name))
        lines.append(json.dumps(record, sort_keys=True))
    return lines


def write_corpus(path: str, corpus: Corpus) -> None:
    atomic_write_text(path, "\n".join(corpus_lines(corpus)) + "\n")
    logger.info(f"Wrote corpus of {len(corpus)} words in {len(corpus.runs)} runs to {path}")


def read_corpus(path: str) -> Corpus:
    if not os.path.isfile(path):
        raise DependencyError(path, "synth")
    with open(path, "r", encoding="utf-8") as f:
        return parse_corpus(f)
