import numpy as np
import pytest

from src.config import ModelConfig, RunConfig
from src.stimulus.tokenizer import SubwordTokenizer


def numeric_gradient(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    grad = np.zeros_like(x, dtype=np.float64)
    for index in np.ndindex(x.shape):
        plus = x.astype(np.float64).copy()
        minus = x.astype(np.float64).copy()
        plus[index] += eps
        minus[index] -= eps
        grad[index] = (fn(plus) - fn(minus)) / (2 * eps)
    return grad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_config():
    return ModelConfig(n_layers=3, hidden_size=16, n_heads=2, vocab_size=96, max_positions=64, mlp_ratio=2, seed=3)


@pytest.fixture
def tiny_ssm_config():
    return ModelConfig(family="ssm", n_layers=3, hidden_size=16, n_heads=2, vocab_size=96, max_positions=64, mlp_ratio=2, seed=3)


@pytest.fixture
def tokenizer():
    return SubwordTokenizer(512)


@pytest.fixture
def tiny_run_config():
    """Smallest config that still exercises every stage end to end."""
    return RunConfig.model_validate({
        "model": {"n_layers": 3, "hidden_size": 16, "n_heads": 2, "vocab_size": 512,
                  "max_positions": 64, "mlp_ratio": 2},
        "training": {"steps": 4, "batch_size": 2, "seq_len": 8, "eval_interval": 2, "eval_windows": 2},
        "pipeline": {"context_words": 8, "delays": 2, "masking_seeds": 2, "random_baseline_draws": 10,
                     "max_attribution_trs": 6, "thresholds": [10, 50, 90],
                     "masking_thresholds": [10, 50]},
        "folds": {"outer_folds": 2, "inner_folds": 2, "lambda_grid": [0.1, 10.0, 1000.0]},
        "synthetic": {"n_words": 96, "n_runs": 2, "n_voxels": 4, "n_subjects": 1},
    })
