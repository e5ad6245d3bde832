"""
Next-token training for the toy language models.
"""

import math
import time
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from ..autodiff import Tape, backward, ops
from ..config import ModelConfig, TrainingConfig
from ..errors import NumericalError, RejectedInputError, TrainingError
from ..utils.logger import app_logger as logger
from .toy_lm import ModelParams, forward_graph, init_params


def _windows(stream: np.ndarray, starts: np.ndarray, length: int) -> np.ndarray:
    return np.stack([stream[s:s + length] for s in starts])


def _batch_loss(params_on_tape, windows: np.ndarray, config: ModelConfig):
    inputs, targets = windows[:, :-1], windows[:, 1:]
    x = ops.embedding(params_on_tape["embed"], inputs)
    _, logits = forward_graph(params_on_tape, x, config)
    return ops.cross_entropy(logits, targets)


def _as_stream(token_stream: Sequence[int]) -> np.ndarray:
    stream = np.asarray(token_stream, dtype=np.int64).reshape(-1)
    if stream.size < 2:
        raise RejectedInputError(f"Token stream needs at least 2 tokens, got {stream.size}")
    return stream


def evaluation_windows(stream_length: int, seq_len: int, count: int) -> np.ndarray:
    """Evenly spaced, deterministic window starts covering the stream."""
    last_start = stream_length - (seq_len + 1)
    if last_start < 0:
        raise RejectedInputError(
            f"Token stream of {stream_length} tokens is shorter than one window of {seq_len + 1}"
        )
    return np.unique(np.linspace(0, last_start, num=count).astype(np.int64))


def evaluate_cross_entropy(
    params: ModelParams,
    token_stream: Sequence[int],
    seq_len: int = 32,
    windows: int = 16
) -> float:
    """Mean next-token cross-entropy over evenly spaced windows of a stream.

    Args:
        params: Model parameters
        token_stream: Token ids
        seq_len: Input length of each window
        windows: Number of windows

    Returns:
        Mean cross-entropy in nats
    """
    stream = _as_stream(token_stream)
    seq_len = min(seq_len, params.config.max_positions, len(stream) - 1)
    starts = evaluation_windows(len(stream), seq_len, windows)
    tape = Tape()
    loss = _batch_loss(params.bind(tape), _windows(stream, starts, seq_len + 1), params.config)
    return loss.item()


def _clip(grads: Dict[str, np.ndarray], max_norm: float) -> Dict[str, np.ndarray]:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    factor = max_norm / total
    return {name: g * factor for name, g in grads.items()}


def train_lm(
    config: ModelConfig,
    token_stream: Sequence[int],
    steps: int,
    learning_rate: float,
    settings: Optional[TrainingConfig] = None,
    progress_callback: Optional[Callable[[Dict[str, float]], None]] = None
) -> ModelParams:
    """Train a toy LM with Adam on random windows of a token stream.

    The returned parameters are the best seen at evaluation points (initialization
    included), so their cross-entropy on the evaluation windows never exceeds the initial one.

    Args:
        config: Model configuration; config.seed drives init and batch sampling
        token_stream: Tokenized training corpus
        steps: Number of optimizer steps (0 returns the initialization)
        learning_rate: Adam step size
        settings: Remaining optimizer settings
        progress_callback: Called with {"step", "loss", "eval_loss"} at evaluation points

    Returns:
        Trained ModelParams
    """
    if steps < 0:
        raise RejectedInputError(f"steps must be >= 0, got {steps}")
    settings = settings or TrainingConfig(steps=steps, learning_rate=learning_rate)
    params = init_params(config)
    if steps == 0:
        return params

    stream = _as_stream(token_stream)
    if stream.size and (stream.min() < 0 or stream.max() >= config.vocab_size):
        raise RejectedInputError(f"Token ids must lie in [0, {config.vocab_size})")
    seq_len = min(settings.seq_len, config.max_positions, len(stream) - 1)
    eval_starts = evaluation_windows(len(stream), seq_len, settings.eval_windows)
    eval_batch = _windows(stream, eval_starts, seq_len + 1)
    rng = np.random.default_rng(config.seed + 1)

    def eval_loss(current: ModelParams) -> float:
        tape = Tape()
        return _batch_loss(current.bind(tape), eval_batch, config).item()

    best_params = params
    best_loss = initial_loss = eval_loss(params)
    logger.info(f"Training {config.family} LM: {steps} steps, initial CE {initial_loss:.4f}")

    arrays = {name: np.array(value) for name, value in params.arrays.items()}
    first_moment = {name: np.zeros_like(value) for name, value in arrays.items()}
    second_moment = {name: np.zeros_like(value) for name, value in arrays.items()}
    start_time = time.time()

    for step in range(1, steps + 1):
        starts = rng.integers(0, len(stream) - seq_len, size=settings.batch_size)
        tape = Tape()
        bound = {name: tape.leaf(value) for name, value in arrays.items()}
        try:
            loss = _batch_loss(bound, _windows(stream, starts, seq_len + 1), config)
        except NumericalError as e:
            raise TrainingError(f"Non-finite values during training: {e}", step)
        if not np.isfinite(loss.value):
            raise TrainingError("Non-finite training loss", step)
        gradient_map = backward(tape, loss)
        grads = _clip({name: gradient_map[t] for name, t in bound.items()}, settings.grad_clip)

        bias1 = 1.0 - settings.beta1 ** step
        bias2 = 1.0 - settings.beta2 ** step
        for name, grad in grads.items():
            first_moment[name] = settings.beta1 * first_moment[name] + (1 - settings.beta1) * grad
            second_moment[name] = settings.beta2 * second_moment[name] + (1 - settings.beta2) * grad * grad
            update = (first_moment[name] / bias1) / (np.sqrt(second_moment[name] / bias2) + settings.adam_eps)
            arrays[name] = arrays[name] - learning_rate * update
            if not np.isfinite(arrays[name]).all():
                raise TrainingError(f"Parameter {name} became non-finite", step)

        if step % settings.eval_interval == 0 or step == steps:
            current = ModelParams.from_arrays(config, arrays)
            current_loss = eval_loss(current)
            if current_loss <= best_loss:
                best_loss, best_params = current_loss, current
            logger.debug(f"step {step}: train CE {loss.item():.4f}, eval CE {current_loss:.4f}")
            if progress_callback:
                progress_callback({"step": step, "loss": loss.item(), "eval_loss": current_loss})

    elapsed = time.time() - start_time
    logger.info(
        f"Training finished in {elapsed:.1f}s: eval CE {initial_loss:.4f} -> {best_loss:.4f}"
    )
    return best_params
