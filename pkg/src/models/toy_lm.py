"""
Tiny causal language models built on the autodiff tape.

Two families share one interface:
  transformer  pre-norm decoder blocks (causal multi-head attention + SiLU MLP), learned
               absolute position embeddings
  ssm          pre-norm diagonal linear state-space blocks with a SiLU gate, no positions

Hidden states are recorded after every block; logits come from a final RMSNorm + LM head.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..autodiff import Tape, Tensor, ops
from ..config import ModelConfig
from ..errors import RejectedInputError

MASK_VALUE = -1e9


def param_layout(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Ordered (name, shape) list of every parameter array."""
    H, V = config.hidden_size, config.vocab_size
    layout = [("embed", (V, H))]
    if config.family == "transformer":
        layout.append(("pos", (config.max_positions, H)))
    for i in range(config.n_layers):
        prefix = f"layers.{i}."
        if config.family == "transformer":
            inner = config.mlp_ratio * H
            layout += [
                (prefix + "attn_norm", (H,)),
                (prefix + "wq", (H, H)),
                (prefix + "wk", (H, H)),
                (prefix + "wv", (H, H)),
                (prefix + "wo", (H, H)),
                (prefix + "mlp_norm", (H,)),
                (prefix + "w_up", (H, inner)),
                (prefix + "w_down", (inner, H)),
            ]
        else:
            layout += [
                (prefix + "norm", (H,)),
                (prefix + "w_in", (H, H)),
                (prefix + "decay_logit", (H,)),
                (prefix + "w_gate", (H, H)),
                (prefix + "w_out", (H, H)),
            ]
    layout += [("final_norm", (H,)), ("lm_head", (H, V))]
    return layout


@dataclass(frozen=True)
class ModelParams:
    """Immutable parameter set: config plus arrays in param_layout order."""
    config: ModelConfig
    arrays: Mapping[str, np.ndarray]

    def __post_init__(self):
        expected = param_layout(self.config)
        if [name for name, _ in expected] != list(self.arrays):
            raise RejectedInputError("Parameter names do not match the config layout")
        for name, shape in expected:
            array = self.arrays[name]
            if array.shape != shape:
                raise RejectedInputError(f"Parameter {name} has shape {array.shape}, expected {shape}")
            if not np.isfinite(array).all():
                raise RejectedInputError(f"Parameter {name} contains non-finite values")
            array.setflags(write=False)

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: Mapping[str, np.ndarray]) -> "ModelParams":
        ordered = {
            name: np.array(arrays[name], dtype=np.float64)
            for name, _ in param_layout(config)
            if name in arrays
        }
        return cls(config, ordered)

    def names(self) -> List[str]:
        return list(self.arrays)

    def with_arrays(self, updates: Mapping[str, np.ndarray]) -> "ModelParams":
        arrays = dict(self.arrays)
        arrays.update(updates)
        return ModelParams.from_arrays(self.config, arrays)

    def equals(self, other: "ModelParams") -> bool:
        return self.config == other.config and all(
            np.array_equal(self.arrays[name], other.arrays[name]) for name in self.arrays
        )

    def bind(self, tape: Tape, trainable: bool = False) -> Dict[str, Tensor]:
        """Place every array on a tape, as leaves when trainable else as constants."""
        make = tape.leaf if trainable else tape.constant
        return {name: make(array) for name, array in self.arrays.items()}


def init_params(config: ModelConfig) -> ModelParams:
    """Deterministic initialization from config.seed."""
    rng = np.random.default_rng(config.seed)
    residual_gain = 1.0 / math.sqrt(2 * config.n_layers)
    arrays = {}
    for name, shape in param_layout(config):
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("norm"):
            arrays[name] = np.ones(shape)
        elif leaf == "decay_logit":
            decay = np.linspace(0.5, 0.98, shape[0])
            arrays[name] = np.log(decay / (1.0 - decay))
        elif leaf in ("embed", "pos"):
            arrays[name] = rng.normal(0.0, 0.5, size=shape)
        else:
            gain = residual_gain if leaf in ("wo", "w_down", "w_out") else 1.0
            arrays[name] = rng.normal(0.0, gain / math.sqrt(shape[0]), size=shape)
    return ModelParams(config, arrays)


@dataclass
class LayerStates:
    """Hidden states after each block, one (T, H) array per layer."""
    states: List[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, layer: int) -> np.ndarray:
        return self.states[layer]


def _causal_mask(length: int) -> np.ndarray:
    return np.triu(np.full((length, length), MASK_VALUE), k=1)


def _attention(p: Mapping[str, Tensor], prefix: str, x: Tensor, config: ModelConfig) -> Tensor:
    batch, length, hidden = x.shape
    n_heads = config.n_heads
    head_dim = hidden // n_heads
    normed = ops.rms_norm(x, p[prefix + "attn_norm"])

    def split_heads(weight: str) -> Tensor:
        projected = ops.reshape(normed @ p[prefix + weight], (batch, length, n_heads, head_dim))
        return ops.transpose(projected, (0, 2, 1, 3))

    q, k, v = split_heads("wq"), split_heads("wk"), split_heads("wv")
    scores = ops.scale(q @ ops.transpose(k, (0, 1, 3, 2)), 1.0 / math.sqrt(head_dim))
    weights = ops.softmax(ops.add(scores, _causal_mask(length)))
    mixed = ops.transpose(weights @ v, (0, 2, 1, 3))
    return ops.reshape(mixed, (batch, length, hidden)) @ p[prefix + "wo"]


def _mlp(p: Mapping[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    normed = ops.rms_norm(x, p[prefix + "mlp_norm"])
    return ops.silu(normed @ p[prefix + "w_up"]) @ p[prefix + "w_down"]


def _ssm(p: Mapping[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    normed = ops.rms_norm(x, p[prefix + "norm"])
    decay = ops.sigmoid(p[prefix + "decay_logit"])
    scanned = ops.diag_scan(normed @ p[prefix + "w_in"], decay)
    gate = ops.silu(normed @ p[prefix + "w_gate"])
    return ops.mul(scanned, gate) @ p[prefix + "w_out"]


def forward_graph(
    p: Mapping[str, Tensor],
    embeddings: Tensor,
    config: ModelConfig,
    upto_layer: Optional[int] = None
) -> Tuple[List[Tensor], Optional[Tensor]]:
    """Run the network on token embeddings of shape (B, T, H).

    Args:
        p: Parameters bound to the same tape as embeddings
        embeddings: Token embeddings at the lookup output, before positions are added
        config: Model configuration
        upto_layer: Stop after this layer and skip the LM head

    Returns:
        Tuple of (per-layer hidden states, logits or None)
    """
    if embeddings.ndim != 3 or embeddings.shape[-1] != config.hidden_size:
        raise RejectedInputError(
            f"Embeddings must have shape (B, T, {config.hidden_size}), got {embeddings.shape}"
        )
    length = embeddings.shape[1]
    if length > config.max_positions:
        raise RejectedInputError(
            f"Input of {length} tokens exceeds max_positions={config.max_positions}"
        )
    last = config.n_layers - 1 if upto_layer is None else upto_layer
    if not 0 <= last < config.n_layers:
        raise RejectedInputError(f"Layer {upto_layer} out of range for {config.n_layers} layers")

    h = embeddings
    if config.family == "transformer":
        h = ops.add(h, ops.take(p["pos"], np.arange(length), axis=0))
    states = []
    for i in range(last + 1):
        prefix = f"layers.{i}."
        if config.family == "transformer":
            h = ops.add(h, _attention(p, prefix, h, config))
            h = ops.add(h, _mlp(p, prefix, h))
        else:
            h = ops.add(h, _ssm(p, prefix, h))
        states.append(h)
    if upto_layer is not None:
        return states, None
    logits = ops.rms_norm(h, p["final_norm"]) @ p["lm_head"]
    return states, logits


def validate_tokens(config: ModelConfig, tokens: Sequence[int]) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if ids.size == 0:
        raise RejectedInputError("Token sequence is empty")
    if ids.size > config.max_positions:
        raise RejectedInputError(
            f"Input of {ids.size} tokens exceeds max_positions={config.max_positions}"
        )
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise RejectedInputError(f"Token ids must lie in [0, {config.vocab_size})")
    return ids


def forward(
    params: ModelParams,
    tokens: Sequence[int],
    tape: Optional[Tape] = None
) -> Tuple[LayerStates, np.ndarray]:
    """Forward pass on one token sequence.

    Args:
        params: Model parameters
        tokens: Token ids, length <= max_positions
        tape: Optional tape to record on (its flops counter measures cost)

    Returns:
        Tuple of (LayerStates with one (T, H) array per layer, logits (T, vocab_size))
    """
    ids = validate_tokens(params.config, tokens)
    tape = tape if tape is not None else Tape()
    p = params.bind(tape)
    x = ops.embedding(p["embed"], ids[None, :])
    states, logits = forward_graph(p, x, params.config)
    return LayerStates([s.value[0] for s in states]), logits.value[0]


def token_embeddings(params: ModelParams, tokens: Sequence[int]) -> np.ndarray:
    """Embedding-table rows for a token sequence, shape (T, H)."""
    ids = validate_tokens(params.config, tokens)
    return np.array(params.arrays["embed"][ids])


# A representation maps token embeddings (a (T, H) tensor) to a (T, H) state tensor
Representation = Callable[[Tape, Tensor], Tensor]


class LayerRepresentation:
    """Hidden state of one layer as a function of input token embeddings."""

    def __init__(self, params: ModelParams, layer: int):
        if not 0 <= layer < params.config.n_layers:
            raise RejectedInputError(f"Layer {layer} out of range for {params.config.n_layers} layers")
        self.params = params
        self.layer = layer

    def __call__(self, tape: Tape, embeddings: Tensor) -> Tensor:
        p = self.params.bind(tape)
        batched = ops.reshape(embeddings, (1,) + embeddings.shape)
        states, _ = forward_graph(p, batched, self.params.config, upto_layer=self.layer)
        return ops.reshape(states[-1], embeddings.shape)


class IdentityRepresentation:
    """Stand-in model whose layer state is the input embedding itself."""

    def __call__(self, tape: Tape, embeddings: Tensor) -> Tensor:
        return embeddings


def next_token_logits(params: ModelParams, tape: Tape, embeddings: Tensor) -> Tensor:
    """Logits (T, vocab_size) for a (T, H) embedding tensor."""
    p = params.bind(tape)
    batched = ops.reshape(embeddings, (1,) + embeddings.shape)
    _, logits = forward_graph(p, batched, params.config)
    return ops.reshape(logits, (embeddings.shape[0], params.config.vocab_size))
