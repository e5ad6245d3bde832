"""Toy causal language models."""

from .checkpoint import load_checkpoint, save_checkpoint
from .toy_lm import (
    IdentityRepresentation,
    LayerRepresentation,
    LayerStates,
    ModelParams,
    forward,
    init_params,
    next_token_logits,
    param_layout,
    token_embeddings,
)
from .training import evaluate_cross_entropy, train_lm

__all__ = [
    "IdentityRepresentation",
    "LayerRepresentation",
    "LayerStates",
    "ModelParams",
    "evaluate_cross_entropy",
    "forward",
    "init_params",
    "load_checkpoint",
    "next_token_logits",
    "param_layout",
    "save_checkpoint",
    "token_embeddings",
    "train_lm",
]
