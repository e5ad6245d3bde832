import json
import os

import numpy as np
import pytest

from src.config import ModelConfig
from src.errors import DependencyError, InternalConsistencyError, RejectedInputError
from src.models import forward, init_params
from src.stimulus import (
    AnnotationSet,
    Corpus,
    WordRecord,
    assign_tr,
    build_context,
    build_contexts,
    build_design_matrices,
    compute_word_embeddings,
    corpus_token_stream,
    delay_concatenate,
    load_design,
    parse_corpus,
    read_corpus,
    save_design,
    tokenize_context,
    tr_embeddings,
    tr_layout,
    word_embedding,
    write_corpus,
)
from src.stimulus.corpus import corpus_lines
from src.stimulus.tokenizer import UNK_ID, SubwordTokenizer, split_pieces

VOCABULARIES = {"semantic": ["animal", "place"], "syntactic": ["noun"], "discourse": ["opener"]}


def _corpus(n_words=24, n_runs=2):
    words = ["the", "wizard", "saw", "an", "owl", "near", "the", "castle"]
    runs = [[words[(r * 3 + i) % len(words)] for i in range(n_words // n_runs)] for r in range(n_runs)]
    return Corpus.from_runs(runs, vocabularies=VOCABULARIES)


def _header():
    return json.dumps({"record": "header", "format_version": 1, "tr_duration_s": 2.0,
                       "word_duration_s": 0.5, "vocabularies": VOCABULARIES})


def _word(surface="owl", run=0, tr=0, **extra):
    record = {"surface": surface, "run": run, "tr_index": tr}
    record.update(extra)
    return json.dumps(record)


class TestTokenizer:
    """Tests for the subword tokenizer."""

    def setup_method(self):
        self.tokenizer = SubwordTokenizer(512)

    def test_split_pieces(self):
        assert split_pieces("owl") == ["owl"]
        assert split_pieces("wizard") == ["wiz", "ard"]
        assert split_pieces("abcd") == ["ab", "cd"]
        assert split_pieces("wizards") == ["wiz", "ar", "ds"]

    def test_long_words_give_several_tokens(self):
        assert len(self.tokenizer.tokenize("owl")) == 1
        assert len(self.tokenizer.tokenize("lantern")) >= 2

    def test_single_characters_have_fixed_ids(self):
        assert self.tokenizer.tokenize("a") == [4]
        assert self.tokenizer.tokenize("0") == [4 + 26]

    def test_ids_in_range_and_deterministic(self):
        other = SubwordTokenizer(512)
        for word in ["the", "wizard", "remembered", "castle's"]:
            ids = self.tokenizer.tokenize(word)
            assert ids == other.tokenize(word)
            assert all(0 <= i < 512 for i in ids)

    def test_case_is_normalized(self):
        assert self.tokenizer.tokenize("Castle") == self.tokenizer.tokenize("castle")

    def test_unknown_characters_map_to_unk(self):
        assert self.tokenizer.tokenize("é") == [UNK_ID]

    def test_word_spans(self):
        ids, spans = self.tokenizer.tokenize_words(["the", "wizard", "a"])
        assert spans == [(0, 1), (1, 3), (3, 4)]
        assert len(ids) == 4

    def test_empty_word_rejected(self):
        with pytest.raises(RejectedInputError):
            self.tokenizer.tokenize("  ")

    def test_tiny_vocabulary_rejected(self):
        with pytest.raises(RejectedInputError):
            SubwordTokenizer(40)


class TestCorpus:
    """Tests for the corpus model and file format."""

    def test_tr_assignment(self):
        assert [assign_tr(i, 0.5, 2.0) for i in range(9)] == [0, 0, 0, 0, 1, 1, 1, 1, 2]
        assert assign_tr(3, 0.1, 0.3) == 1

    def test_from_runs(self):
        corpus = _corpus(24, 2)
        assert corpus.runs == ((0, 12), (12, 24))
        assert corpus.n_trs(0) == 3
        assert corpus.words[12].run == 1 and corpus.words[12].tr_index == 0

    def test_file_round_trip(self, tmp_path):
        corpus = Corpus.from_runs(
            [["the", "owl"], ["saw", "it"]],
            [[AnnotationSet(semantic=frozenset({0})), AnnotationSet()],
             [AnnotationSet(syntactic=frozenset({0})), AnnotationSet(discourse=frozenset({0}))]],
            vocabularies=VOCABULARIES
        )
        path = os.path.join(tmp_path, "corpus.jsonl")
        write_corpus(path, corpus)
        assert read_corpus(path) == corpus

    def test_unknown_field_rejected(self):
        with pytest.raises(RejectedInputError, match="unknown fields"):
            parse_corpus([_header(), _word(speaker="narrator")])

    def test_missing_header_rejected(self):
        with pytest.raises(RejectedInputError):
            parse_corpus([_word()])

    @pytest.mark.parametrize("field", ["tr_duration_s", "word_duration_s", "format_version"])
    def test_header_missing_field_rejected(self, field):
        header = json.loads(_header())
        del header[field]
        with pytest.raises(RejectedInputError, match=field):
            parse_corpus([json.dumps(header), _word()])

    def test_header_duration_must_be_positive_number(self):
        header = json.loads(_header())
        header["tr_duration_s"] = "2s"
        with pytest.raises(RejectedInputError, match="tr_duration_s"):
            parse_corpus([json.dumps(header), _word()])

    def test_run_gap_rejected(self):
        with pytest.raises(RejectedInputError):
            parse_corpus([_header(), _word(run=0), _word(run=2)])

    def test_annotation_outside_vocabulary_rejected(self):
        with pytest.raises(RejectedInputError):
            parse_corpus([_header(), _word(semantic=[5])])

    def test_decreasing_tr_rejected(self):
        with pytest.raises(RejectedInputError):
            parse_corpus([_header(), _word(tr=1), _word(tr=0)])

    def test_missing_file_names_producer(self, tmp_path):
        with pytest.raises(DependencyError) as excinfo:
            read_corpus(os.path.join(tmp_path, "corpus.jsonl"))
        assert excinfo.value.producer == "synth"

    def test_header_line_is_first(self):
        lines = corpus_lines(_corpus(8, 1))
        assert json.loads(lines[0])["record"] == "header"
        assert len(lines) == 9

    def test_with_surfaces(self):
        corpus = _corpus(8, 1)
        changed = corpus.with_surfaces({1: "dragon"})
        assert changed.words[1].surface == "dragon"
        assert changed.words[1].tr_index == corpus.words[1].tr_index
        assert corpus.words[1].surface == "wizard"


class TestContexts:
    """Tests for context construction and tokenization."""

    def test_left_truncation(self):
        assert build_context(2, 5).members == (0, 1, 2)
        assert build_context(9, 4).members == (6, 7, 8, 9)

    def test_contexts_cross_runs(self):
        contexts = build_contexts(_corpus(24, 2), 4)
        assert contexts[13].members == (10, 11, 12, 13)

    def test_context_length_validated(self):
        with pytest.raises(RejectedInputError):
            build_contexts(_corpus(8, 1), 0)

    def test_token_limit(self, tokenizer):
        corpus = _corpus(24, 1)
        with pytest.raises(RejectedInputError, match="max_positions"):
            tokenize_context(corpus, build_context(20, 20), tokenizer, max_positions=5)

    def test_word_embedding_uses_final_word_tokens(self, tokenizer):
        corpus = _corpus(8, 1)
        tokenized = tokenize_context(corpus, build_context(1, 2), tokenizer)
        states = np.arange(len(tokenized.token_ids) * 2, dtype=float).reshape(-1, 2)
        start, end = tokenized.final_span
        np.testing.assert_allclose(word_embedding(states, tokenized), states[start:end].mean(axis=0))

    def test_word_embedding_alignment_checked(self, tokenizer):
        corpus = _corpus(8, 1)
        tokenized = tokenize_context(corpus, build_context(1, 2), tokenizer)
        with pytest.raises(InternalConsistencyError):
            word_embedding(np.zeros((len(tokenized.token_ids) + 1, 2)), tokenized)

    def test_token_stream_covers_corpus(self, tokenizer):
        corpus = _corpus(8, 1)
        stream = corpus_token_stream(corpus, tokenizer)
        assert stream.size == sum(len(tokenizer.tokenize(w)) for w in corpus.surfaces)


class TestDesign:
    """Tests for TR layout and delay concatenation."""

    def test_layout(self):
        layout = tr_layout(_corpus(24, 2))
        assert layout.keys[:3] == ((0, 0), (0, 1), (0, 2))
        assert layout.words[1] == (4, 5, 6, 7)
        assert layout.index((1, 0)) == 3

    def test_empty_tr_reuses_previous(self):
        words = tuple(
            WordRecord(surface, i, 0, tr)
            for i, (surface, tr) in enumerate([("the", 0), ("owl", 0), ("saw", 2)])
        )
        corpus = Corpus(words=words, runs=((0, 3),), vocabularies={"semantic": (), "syntactic": (), "discourse": ()})
        layout = tr_layout(corpus)
        assert layout.words[1] == ()
        assert layout.source((0, 1)) == (0, 0)
        embeddings = tr_embeddings(layout, np.array([[1.0], [3.0], [10.0]]))
        np.testing.assert_allclose(embeddings[:, 0], [2.0, 2.0, 10.0])

    def test_delay_order_and_dropped_rows(self):
        corpus = _corpus(24, 2)
        layout = tr_layout(corpus)
        per_tr = np.arange(len(layout.keys), dtype=float)[:, None] * np.ones((1, 2))
        design = delay_concatenate(per_tr, layout, delays=2)
        assert design.keys() == [(0, 1), (0, 2), (1, 1), (1, 2)]
        np.testing.assert_allclose(design.values[0], [1, 1, 0, 0])
        np.testing.assert_allclose(design.values[2], [4, 4, 3, 3])
        assert design.hidden_size == 2

    def test_delay_history_required(self):
        layout = tr_layout(_corpus(24, 2))
        with pytest.raises(RejectedInputError):
            layout.delay_keys((0, 0), 2)

    def test_design_round_trip(self, tmp_path):
        layout = tr_layout(_corpus(24, 2))
        design = delay_concatenate(np.ones((len(layout.keys), 3)), layout, delays=2, layer=1)
        path = os.path.join(tmp_path, "design.npz")
        save_design(path, design)
        loaded = load_design(path)
        np.testing.assert_array_equal(loaded.values, design.values)
        np.testing.assert_array_equal(loaded.row_keys, design.row_keys)
        assert loaded.layer == 1 and loaded.delays == 2


class TestEmbeddings:
    """Tests for model-based word embeddings and design matrices."""

    def setup_method(self):
        self.config = ModelConfig(n_layers=3, hidden_size=8, n_heads=2, vocab_size=512, max_positions=64, mlp_ratio=2)
        self.params = init_params(self.config)
        self.corpus = _corpus(16, 2)
        self.tokenizer = SubwordTokenizer(512)

    def test_matches_direct_forward(self):
        embeddings = compute_word_embeddings(self.params, self.corpus, self.tokenizer, 3, [0, 2])
        tokenized = tokenize_context(self.corpus, build_context(5, 3), self.tokenizer)
        states, _ = forward(self.params, tokenized.token_ids)
        np.testing.assert_allclose(embeddings[2][5], word_embedding(states[2], tokenized), atol=1e-12)
        assert embeddings[0].shape == (16, 8)

    def test_parallel_matches_serial(self):
        serial = compute_word_embeddings(self.params, self.corpus, self.tokenizer, 3, [1], jobs=1)
        parallel = compute_word_embeddings(self.params, self.corpus, self.tokenizer, 3, [1], jobs=2)
        np.testing.assert_array_equal(serial[1], parallel[1])

    def test_design_matrices(self):
        designs = build_design_matrices(self.params, self.corpus, self.tokenizer, 3, 2, [0, 1])
        assert sorted(designs) == [0, 1]
        assert designs[1].values.shape == (2, 16)
        assert designs[1].layer == 1
