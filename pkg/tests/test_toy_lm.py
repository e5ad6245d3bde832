import os

import numpy as np
import pytest
from unittest.mock import MagicMock, patch

from src.autodiff import Tape
from src.config import TrainingConfig
from src.errors import DependencyError, NumericalError, RejectedInputError, TrainingError
from src.models import (
    IdentityRepresentation,
    LayerRepresentation,
    ModelParams,
    evaluate_cross_entropy,
    forward,
    init_params,
    load_checkpoint,
    next_token_logits,
    save_checkpoint,
    token_embeddings,
    train_lm,
)
from src.utils.file_utils import file_digest

PERIODIC_STREAM = np.tile(np.arange(4, 20), 40)


class TestForward:
    """Tests for the transformer and SSM forward passes."""

    @pytest.mark.parametrize("family", ["transformer", "ssm"])
    def test_shapes(self, family, tiny_model_config):
        config = tiny_model_config.model_copy(update={"family": family})
        params = init_params(config)
        states, logits = forward(params, [5, 6, 7, 8, 9])
        assert len(states) == config.n_layers
        assert all(s.shape == (5, config.hidden_size) for s in states.states)
        assert logits.shape == (5, config.vocab_size)

    def test_init_is_deterministic(self, tiny_model_config):
        assert init_params(tiny_model_config).equals(init_params(tiny_model_config))

    def test_ssm_has_no_position_table(self, tiny_ssm_config):
        assert "pos" not in init_params(tiny_ssm_config).names()

    @pytest.mark.parametrize("family", ["transformer", "ssm"])
    def test_causal(self, family, tiny_model_config):
        config = tiny_model_config.model_copy(update={"family": family})
        params = init_params(config)
        first, _ = forward(params, [10, 11, 12, 13, 14, 15])
        second, _ = forward(params, [10, 11, 12, 40, 41, 42])
        for layer in range(config.n_layers):
            np.testing.assert_allclose(first[layer][:3], second[layer][:3], atol=1e-12)
            assert not np.allclose(first[layer][3:], second[layer][3:])

    def test_too_many_tokens_rejected(self, tiny_model_config):
        params = init_params(tiny_model_config)
        with pytest.raises(RejectedInputError):
            forward(params, np.full(tiny_model_config.max_positions + 1, 5))

    def test_token_id_out_of_range_rejected(self, tiny_model_config):
        params = init_params(tiny_model_config)
        with pytest.raises(RejectedInputError):
            forward(params, [tiny_model_config.vocab_size])

    def test_ssm_cost_is_linear(self, tiny_ssm_config):
        params = init_params(tiny_ssm_config)
        short, long = Tape(), Tape()
        forward(params, np.arange(4, 20), short)
        forward(params, np.arange(4, 36), long)
        assert long.flops / short.flops == pytest.approx(2.0, rel=0.05)

    def test_transformer_cost_is_superlinear(self, tiny_model_config):
        params = init_params(tiny_model_config)
        short, long = Tape(), Tape()
        forward(params, np.arange(4, 20), short)
        forward(params, np.arange(4, 36), long)
        assert long.flops / short.flops > 2.0

    @pytest.mark.parametrize("family", ["transformer", "ssm"])
    def test_layer_representation_matches_forward(self, family, tiny_model_config):
        config = tiny_model_config.model_copy(update={"family": family})
        params = init_params(config)
        tokens = [7, 8, 9, 10]
        states, logits = forward(params, tokens)
        tape = Tape()
        embeddings = tape.leaf(token_embeddings(params, tokens))
        for layer in range(config.n_layers):
            output = LayerRepresentation(params, layer)(tape, embeddings)
            np.testing.assert_allclose(output.value, states[layer], atol=1e-12)
        np.testing.assert_allclose(next_token_logits(params, tape, embeddings).value, logits, atol=1e-12)

    def test_layer_representation_range(self, tiny_model_config):
        with pytest.raises(RejectedInputError):
            LayerRepresentation(init_params(tiny_model_config), tiny_model_config.n_layers)

    def test_identity_representation(self):
        tape = Tape()
        x = tape.leaf(np.ones((2, 3)))
        assert IdentityRepresentation()(tape, x) is x

    def test_params_are_immutable(self, tiny_model_config):
        params = init_params(tiny_model_config)
        with pytest.raises(ValueError):
            params.arrays["embed"][0, 0] = 1.0

    def test_params_shape_checked(self, tiny_model_config):
        params = init_params(tiny_model_config)
        with pytest.raises(RejectedInputError):
            params.with_arrays({"embed": np.zeros((3, 3))})


class TestTraining:
    """Tests for next-token training."""

    def setup_method(self):
        self.settings = TrainingConfig(steps=30, learning_rate=1e-2, batch_size=4, seq_len=8,
                                       eval_interval=5, eval_windows=4)

    def test_zero_steps_returns_initialization(self, tiny_model_config):
        params = train_lm(tiny_model_config, PERIODIC_STREAM, 0, 1e-2, self.settings)
        assert params.equals(init_params(tiny_model_config))

    def test_training_lowers_cross_entropy(self, tiny_model_config):
        initial = evaluate_cross_entropy(init_params(tiny_model_config), PERIODIC_STREAM, 8, 4)
        trained = train_lm(tiny_model_config, PERIODIC_STREAM, 30, 1e-2, self.settings)
        final = evaluate_cross_entropy(trained, PERIODIC_STREAM, 8, 4)
        assert final <= initial
        assert final < initial - 0.1

    def test_held_out_cross_entropy_beats_uniform(self, tiny_model_config):
        settings = self.settings.model_copy(update={"steps": 150, "learning_rate": 3e-2})
        trained = train_lm(tiny_model_config, PERIODIC_STREAM, 150, 3e-2, settings)
        held_out = np.roll(np.tile(np.arange(4, 20), 6), 5)
        assert evaluate_cross_entropy(trained, held_out, 8, 4) < np.log(tiny_model_config.vocab_size)

    def test_training_is_deterministic(self, tiny_model_config):
        first = train_lm(tiny_model_config, PERIODIC_STREAM, 10, 1e-2, self.settings)
        second = train_lm(tiny_model_config, PERIODIC_STREAM, 10, 1e-2, self.settings)
        assert first.equals(second)

    def test_progress_reports_evaluation_points(self, tiny_model_config):
        seen = []
        train_lm(tiny_model_config, PERIODIC_STREAM, 10, 1e-2, self.settings, seen.append)
        assert [info["step"] for info in seen] == [5, 10]
        assert all(np.isfinite(info["eval_loss"]) for info in seen)

    def test_numerical_failure_becomes_training_error(self, tiny_model_config):
        initial_eval = MagicMock()
        initial_eval.item.return_value = 4.5
        with patch("src.models.training._batch_loss", side_effect=[initial_eval, NumericalError("overflow")]):
            with pytest.raises(TrainingError) as excinfo:
                train_lm(tiny_model_config, PERIODIC_STREAM, 3, 1e-2, self.settings)
        assert excinfo.value.step == 1

    def test_out_of_vocabulary_stream_rejected(self, tiny_model_config):
        with pytest.raises(RejectedInputError):
            train_lm(tiny_model_config, [0, 1, tiny_model_config.vocab_size] * 10, 2, 1e-2, self.settings)

    def test_short_stream_rejected(self, tiny_model_config):
        with pytest.raises(RejectedInputError):
            evaluate_cross_entropy(init_params(tiny_model_config), [4], 8, 2)


class TestCheckpoint:
    """Tests for checkpoint save/load."""

    def test_round_trip(self, tmp_path, tiny_model_config):
        params = init_params(tiny_model_config)
        path = os.path.join(tmp_path, "model.npz")
        save_checkpoint(path, params, {"steps": 0})
        loaded, metadata = load_checkpoint(path)
        assert loaded.equals(params)
        assert metadata == {"steps": 0}

    def test_bytes_are_deterministic(self, tmp_path, tiny_ssm_config):
        params = init_params(tiny_ssm_config)
        first, second = os.path.join(tmp_path, "a.npz"), os.path.join(tmp_path, "b.npz")
        save_checkpoint(first, params)
        save_checkpoint(second, params)
        assert file_digest(first) == file_digest(second)

    def test_missing_checkpoint_names_producer(self, tmp_path):
        with pytest.raises(DependencyError) as excinfo:
            load_checkpoint(os.path.join(tmp_path, "absent.npz"))
        assert excinfo.value.producer == "train"
