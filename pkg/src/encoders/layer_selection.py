"""
Three-depth layer selection.
"""

from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from ..errors import RejectedInputError
from .cross_validation import AlignmentScore


@dataclass(frozen=True)
class LayerSelection:
    early: int
    middle: int
    late: int

    def as_list(self) -> List[int]:
        return [self.early, self.middle, self.late]


def layer_means(scores: Sequence[AlignmentScore]) -> Dict[int, float]:
    """Mean r per layer, averaged over voxels then subjects."""
    per_layer = defaultdict(list)
    for score in scores:
        per_layer[score.layer].append(score.mean_r)
    return {layer: float(np.mean(values)) for layer, values in sorted(per_layer.items())}


def select_layers(layer_scores: Sequence[float], n_layers: int) -> LayerSelection:
    """Best layer of each equal-depth third; ties go to the shallower layer.

    Args:
        layer_scores: Mean alignment per layer, index = layer id
        n_layers: Model depth

    Returns:
        LayerSelection with one layer id per third
    """
    if n_layers < 3:
        raise RejectedInputError(f"Layer selection needs at least 3 layers, got {n_layers}")
    if len(layer_scores) != n_layers:
        raise RejectedInputError(f"Expected {n_layers} layer scores, got {len(layer_scores)}")
    scores = np.asarray(layer_scores, dtype=np.float64)
    chosen = [int(third[np.argmax(scores[third])]) for third in np.array_split(np.arange(n_layers), 3)]
    return LayerSelection(*chosen)
