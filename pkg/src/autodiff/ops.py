"""
Differentiable operations recorded on a Tape.

Every op validates operand shapes, computes its forward value with numpy and records a
vector-Jacobian product closure for the backward sweep.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import RejectedInputError
from .tensor import Tape, Tensor

Operand = Union[Tensor, np.ndarray, float, int]

RMS_EPS = 1e-6


def _tape_of(*operands) -> Tape:
    for operand in operands:
        if isinstance(operand, Tensor):
            return operand.tape
    raise RejectedInputError("At least one operand must be a Tensor")


def _lift(tape: Tape, operand: Operand) -> Tensor:
    if isinstance(operand, Tensor):
        return operand
    return tape.constant(operand)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to an operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise RejectedInputError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def add(a: Operand, b: Operand) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _broadcast_shape("add", a, b)
    value = a.value + b.value

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return tape.record("add", (a, b), value, vjp, value.size)


def sub(a: Operand, b: Operand) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _broadcast_shape("sub", a, b)
    value = a.value - b.value

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return tape.record("sub", (a, b), value, vjp, value.size)


def mul(a: Operand, b: Operand) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value
    value = av * bv

    def vjp(g):
        return _unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)

    return tape.record("mul", (a, b), value, vjp, value.size)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    value = a.value * factor

    def vjp(g):
        return (g * factor,)

    return a.tape.record("scale", (a,), value, vjp, value.size)


def matmul(a: Operand, b: Operand) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast."""
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.ndim < 2 or b.ndim < 2:
        raise RejectedInputError(f"matmul needs operands with ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise RejectedInputError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise RejectedInputError(f"matmul: batch dimensions differ, {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    value = np.matmul(av, bv)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(bv, -1, -2))
        gb = np.matmul(np.swapaxes(av, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return tape.record("matmul", (a, b), value, vjp, 2 * value.size * a.shape[-1])


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise RejectedInputError(f"transpose: invalid axes {axes} for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    value = np.transpose(a.value, axes)

    def vjp(g):
        return (np.transpose(g, inverse),)

    return a.tape.record("transpose", (a,), value, vjp, 0)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    original = a.shape
    try:
        value = a.value.reshape(tuple(shape))
    except ValueError:
        raise RejectedInputError(f"reshape: cannot reshape {original} to {tuple(shape)}")

    def vjp(g):
        return (g.reshape(original),)

    return a.tape.record("reshape", (a,), value, vjp, 0)


def _restore_axis(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    value = np.sum(a.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        return (np.array(_restore_axis(g, shape, axis, keepdims)),)

    return a.tape.record("sum", (a,), value, vjp, a.value.size)


def mean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    count = a.value.size if axis is None else shape[axis]
    if count == 0:
        raise RejectedInputError("mean over an empty axis")
    value = np.mean(a.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        return (np.array(_restore_axis(g, shape, axis, keepdims)) / count,)

    return a.tape.record("mean", (a,), value, vjp, a.value.size)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    s = exp / exp.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return a.tape.record("softmax", (a,), s, vjp, 4 * s.size)


def rms_norm(x: Tensor, weight: Optional[Tensor] = None, eps: float = RMS_EPS) -> Tensor:
    """x / sqrt(mean(x**2) + eps) over the last axis, optionally scaled by weight."""
    if weight is not None and weight.shape != (x.shape[-1],):
        raise RejectedInputError(f"rms_norm: weight shape {weight.shape} != ({x.shape[-1]},)")
    xv = x.value
    r = 1.0 / np.sqrt(np.mean(xv * xv, axis=-1, keepdims=True) + eps)
    n = xv * r
    wv = weight.value if weight is not None else None
    value = n * wv if wv is not None else n

    def vjp(g):
        dn = g * wv if wv is not None else g
        dx = r * (dn - n * np.mean(dn * n, axis=-1, keepdims=True))
        if weight is None:
            return (dx,)
        return dx, _unbroadcast(g * n, weight.shape)

    inputs = (x,) if weight is None else (x, weight)
    return x.tape.record("rms_norm", inputs, value, vjp, 5 * xv.size)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup: table[ids] for an integer id array of any shape."""
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise RejectedInputError(f"embedding table must be 2-D, got {table.shape}")
    if ids.size and (not np.issubdtype(ids.dtype, np.integer)
                     or ids.min() < 0 or ids.max() >= table.shape[0]):
        raise RejectedInputError(f"embedding ids must be integers in [0, {table.shape[0]})")
    value = table.value[ids]

    def vjp(g):
        grad = np.zeros_like(table.value)
        np.add.at(grad, ids, g)
        return (grad,)

    return table.tape.record("embedding", (table,), value, vjp, value.size)


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Integer indexing along one axis."""
    indices = np.asarray(indices, dtype=np.int64)
    axis = axis % a.ndim
    if indices.size and (indices.min() < -a.shape[axis] or indices.max() >= a.shape[axis]):
        raise RejectedInputError(f"take: index out of range for axis {axis} of {a.shape}")
    shape = a.shape
    value = np.take(a.value, indices, axis=axis)

    def vjp(g):
        grad = np.zeros(shape)
        moved = np.moveaxis(grad, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (grad,)

    return a.tape.record("take", (a,), value, vjp, value.size)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise RejectedInputError("concat of an empty sequence")
    tape = tensors[0].tape
    try:
        value = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError as e:
        raise RejectedInputError(f"concat: {e}")
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return tape.record("concat", tensors, value, vjp, 0)


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.value))

    def vjp(g):
        return (g * s * (1.0 - s),)

    return a.tape.record("sigmoid", (a,), s, vjp, 4 * s.size)


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    xv = a.value
    s = 1.0 / (1.0 + np.exp(-xv))
    value = xv * s

    def vjp(g):
        return (g * s * (1.0 + xv * (1.0 - s)),)

    return a.tape.record("silu", (a,), value, vjp, 5 * xv.size)


def diag_scan(u: Tensor, decay: Tensor) -> Tensor:
    """Diagonal linear recurrence h_t = decay * h_{t-1} + u_t along axis -2, h_{-1} = 0.

    u has shape (..., T, H); decay has shape (H,). Cost is linear in T.
    """
    if decay.shape != (u.shape[-1],):
        raise RejectedInputError(f"diag_scan: decay shape {decay.shape} != ({u.shape[-1]},)")
    uv, av = u.value, decay.value
    steps = uv.shape[-2]
    h = np.zeros_like(uv)
    state = np.zeros(uv.shape[:-2] + uv.shape[-1:])
    for t in range(steps):
        state = av * state + uv[..., t, :]
        h[..., t, :] = state

    def vjp(g):
        du = np.zeros_like(uv)
        carry = np.zeros_like(state)
        for t in range(steps - 1, -1, -1):
            carry = g[..., t, :] + av * carry
            du[..., t, :] = carry
        previous = np.concatenate([np.zeros_like(h[..., :1, :]), h[..., :-1, :]], axis=-2)
        da = (du * previous).reshape(-1, uv.shape[-1]).sum(axis=0)
        return du, da

    return u.tape.record("diag_scan", (u, decay), h, vjp, 3 * uv.size)


def mse(pred: Operand, target: Operand) -> Tensor:
    """Scalar mean squared error over all entries."""
    tape = _tape_of(pred, target)
    pred, target = _lift(tape, pred), _lift(tape, target)
    if pred.shape != target.shape:
        raise RejectedInputError(f"mse: shapes differ, {pred.shape} vs {target.shape}")
    diff = pred.value - target.value
    count = diff.size
    value = np.mean(diff * diff)

    def vjp(g):
        gp = g * 2.0 * diff / count
        return gp, -gp

    return tape.record("mse", (pred, target), value, vjp, 3 * count)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Scalar mean cross-entropy of integer targets under softmax(logits) on the last axis."""
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise RejectedInputError(
            f"cross_entropy: logits {logits.shape} do not match targets {targets.shape}"
        )
    vocab = logits.shape[-1]
    if targets.size == 0:
        raise RejectedInputError("cross_entropy needs at least one target")
    if (not np.issubdtype(targets.dtype, np.integer)
            or targets.min() < 0 or targets.max() >= vocab):
        raise RejectedInputError(f"cross_entropy targets must be integers in [0, {vocab})")
    flat = logits.value.reshape(-1, vocab)
    flat_targets = targets.reshape(-1)
    shifted = flat - flat.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(flat.shape[0])
    count = flat.shape[0]
    value = -np.mean(log_probs[rows, flat_targets])

    def vjp(g):
        grad = np.exp(log_probs)
        grad[rows, flat_targets] -= 1.0
        return ((g / count) * grad.reshape(logits.shape),)

    return logits.tape.record("cross_entropy", (logits,), value, vjp, 4 * flat.size)
