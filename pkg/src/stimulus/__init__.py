"""Corpus handling and stimulus design construction."""

from .corpus import (
    CATEGORIES,
    AnnotationSet,
    Corpus,
    WordRecord,
    assign_tr,
    parse_corpus,
    read_corpus,
    write_corpus,
)
from .pipeline import (
    Context,
    DesignMatrix,
    TokenizedContext,
    TRLayout,
    build_context,
    build_contexts,
    build_design_matrices,
    compute_word_embeddings,
    corpus_token_stream,
    delay_concatenate,
    load_design,
    save_design,
    tokenize_context,
    tr_embedding,
    tr_embeddings,
    tr_layout,
    word_embedding,
)
from .tokenizer import SubwordTokenizer
