"""
Attribution targets and records, and the attribution file format.

Attribution files are JSON lines, one record per (task, method, layer, subject, TR):

    {"task": "brain", "method": "gxi", "ig_steps": 20, "layer": 3, "subject": 0,
     "run": 0, "tr": 7, "loss": 0.93,
     "word_index": [...], "distance": [...], "score": [...]}

layer and subject are null for nwp records. word_index is ascending; distance counts words
back from the most recent word of the TR (0 = latest). Records are ordered by
(task, method, layer, subject, run, tr).
"""

import json
import os
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from ..errors import DependencyError, InternalConsistencyError, RejectedInputError
from ..utils.file_utils import atomic_write_text
from .methods import METHODS

TASKS = ("brain", "nwp")

RECORD_FIELDS = {
    "task", "method", "ig_steps", "layer", "subject", "run", "tr", "loss",
    "word_index", "distance", "score",
}


@dataclass(frozen=True)
class AttributionTarget:
    task: str
    run: int
    tr: int
    method: str = "gxi"
    ig_steps: int = 20
    layer: Optional[int] = None
    subject: Optional[int] = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise RejectedInputError(f"Unknown task {self.task!r}")
        if self.method not in METHODS:
            raise RejectedInputError(f"Unknown method {self.method!r}")
        if self.method == "ig" and self.ig_steps < 1:
            raise RejectedInputError("ig_steps must be >= 1")
        if (self.task == "brain") != (self.layer is not None):
            raise RejectedInputError("A layer is required for brain targets and not allowed for nwp targets")
        if self.task == "brain" and self.subject is None:
            raise RejectedInputError("A subject is required for brain targets")

    @property
    def tr_key(self) -> Tuple[int, int]:
        return (self.run, self.tr)

    def sort_key(self) -> Tuple:
        return (
            self.task, self.method,
            -1 if self.layer is None else self.layer,
            -1 if self.subject is None else self.subject,
            self.run, self.tr
        )


@dataclass(frozen=True)
class AttributionRecord:
    """Signed word-level scores for one target over its extended context."""
    target: AttributionTarget
    word_index: np.ndarray
    distance: np.ndarray
    score: np.ndarray
    loss: float = float("nan")

    def __post_init__(self):
        n = len(self.word_index)
        if len(self.distance) != n or len(self.score) != n:
            raise InternalConsistencyError("word_index, distance and score lengths differ")
        if n and np.any(np.diff(self.word_index) <= 0):
            raise InternalConsistencyError("word_index must be strictly ascending")
        if n and not np.array_equal(self.distance, self.word_index[-1] - self.word_index):
            raise InternalConsistencyError("distances must count back from the most recent word")

    def __len__(self) -> int:
        return len(self.word_index)

    def scores(self) -> Dict[int, float]:
        return {int(w): float(s) for w, s in zip(self.word_index, self.score)}

    def scaled(self, factor: float) -> "AttributionRecord":
        return AttributionRecord(self.target, self.word_index, self.distance, self.score * factor, self.loss)


def make_record(target: AttributionTarget, scores: Dict[int, float], last_word: int, loss: float) -> AttributionRecord:
    words = np.array(sorted(scores), dtype=np.int64)
    return AttributionRecord(
        target=target,
        word_index=words,
        distance=last_word - words,
        score=np.array([scores[w] for w in words], dtype=np.float64),
        loss=float(loss)
    )


def record_to_dict(record: AttributionRecord) -> dict:
    t = record.target
    return {
        "task": t.task, "method": t.method, "ig_steps": t.ig_steps,
        "layer": t.layer, "subject": t.subject, "run": t.run, "tr": t.tr,
        "loss": record.loss,
        "word_index": [int(w) for w in record.word_index],
        "distance": [int(d) for d in record.distance],
        "score": [float(s) for s in record.score],
    }


def record_from_dict(payload: dict) -> AttributionRecord:
    unknown = sorted(set(payload) - RECORD_FIELDS)
    if unknown:
        raise RejectedInputError(f"Unknown attribution record fields {unknown}")
    target = AttributionTarget(
        task=payload["task"], run=int(payload["run"]), tr=int(payload["tr"]),
        method=payload["method"], ig_steps=int(payload["ig_steps"]),
        layer=payload.get("layer"), subject=payload.get("subject")
    )
    return AttributionRecord(
        target=target,
        word_index=np.asarray(payload["word_index"], dtype=np.int64),
        distance=np.asarray(payload["distance"], dtype=np.int64),
        score=np.asarray(payload["score"], dtype=np.float64),
        loss=float(payload["loss"])
    )


def write_records(path: str, records: Iterable[AttributionRecord]) -> None:
    ordered = sorted(records, key=lambda r: r.target.sort_key())
    lines = [json.dumps(record_to_dict(r), sort_keys=True) for r in ordered]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_records(path: str) -> List[AttributionRecord]:
    if not os.path.isfile(path):
        raise DependencyError(path, "attribute")
    with open(path, "r", encoding="utf-8") as f:
        return [record_from_dict(json.loads(line)) for line in f if line.strip()]
