"""Synthetic corpora and responses with known ground truth, plus brute-force oracles."""

from .generator import (
    SyntheticData,
    SyntheticSpec,
    gen_brain_responses,
    gen_corpus,
    generate,
    true_weights,
    truth_design,
    truth_word_embeddings,
)
from .oracles import brute_force_word_importance, designated_share, rank_agreement
