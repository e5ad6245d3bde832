"""Voxelwise ridge encoding models."""

from .cross_validation import (
    AlignmentScore,
    DelayHead,
    EncodingModel,
    FoldModel,
    FoldSpec,
    ResponseMatrix,
    alignment_frame,
    decompose_weights,
    fit_outer_fold,
    load_encoding_model,
    load_responses,
    make_folds,
    nested_cv,
    read_alignment_scores,
    save_encoding_model,
    save_responses,
    select_lambda,
    write_alignment_scores,
)
from .layer_selection import LayerSelection, layer_means, select_layers
from .ridge import Standardizer, fit_ridge, pearson_per_voxel, ridge_path
