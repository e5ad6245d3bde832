"""
Model checkpoint container.

A checkpoint is a "model_checkpoint" container (see utils.file_utils): the header holds the
ModelConfig plus training metadata, and the arrays are the parameters in param_layout order,
which field_order records explicitly.
"""

import os
from typing import Any, Dict, Optional, Tuple

from ..config import ModelConfig
from ..errors import DependencyError, RejectedInputError
from ..utils.file_utils import load_container, save_container
from ..utils.logger import app_logger as logger
from .toy_lm import ModelParams

CHECKPOINT_KIND = "model_checkpoint"


def save_checkpoint(path: str, params: ModelParams, metadata: Optional[Dict[str, Any]] = None) -> None:
    header = {"config": params.config.model_dump(mode="json"), "metadata": metadata or {}}
    save_container(path, CHECKPOINT_KIND, header, params.arrays)
    logger.info(f"Saved {params.config.family} checkpoint to {path}")


def load_checkpoint(path: str) -> Tuple[ModelParams, Dict[str, Any]]:
    """Load a checkpoint written by save_checkpoint.

    Args:
        path: Checkpoint path

    Returns:
        Tuple of (ModelParams, training metadata)
    """
    if not os.path.isfile(path):
        raise DependencyError(path, "train")
    try:
        header, arrays = load_container(path, CHECKPOINT_KIND)
    except (ValueError, KeyError) as e:
        raise RejectedInputError(f"Unreadable checkpoint {path}: {e}")
    config = ModelConfig.model_validate(header["config"])
    return ModelParams.from_arrays(config, arrays), header.get("metadata", {})
