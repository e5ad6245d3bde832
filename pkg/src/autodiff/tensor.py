"""
Tape-based reverse-mode automatic differentiation over dense float64 arrays.

A Tape records one Node per produced tensor, in creation order, so the node list is always
topologically sorted. Tensors are thin handles (tape, node id) onto immutable arrays.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import NumericalError, RejectedInputError

VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass(frozen=True)
class Node:
    """One recorded operation."""
    node_id: int
    op: str
    inputs: Tuple[int, ...]
    value: np.ndarray
    vjp: Optional[VJP]
    requires_grad: bool


class Tensor:
    """Handle onto a node of a ComputationTape."""

    __slots__ = ("tape", "node_id")

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.node_id = node_id

    @property
    def node(self) -> Node:
        return self.tape.nodes[self.node_id]

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.node_id].value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def requires_grad(self) -> bool:
        return self.tape.nodes[self.node_id].requires_grad

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(op={self.node.op!r}, shape={self.shape}, id={self.node_id})"

    # Operator sugar; the real definitions live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def _frozen(values) -> np.ndarray:
    if isinstance(values, np.ndarray) and values.dtype == np.float64 and not values.flags.writeable:
        return values
    array = np.array(values, dtype=np.float64)
    array.setflags(write=False)
    return array


class Tape:
    """Computation tape: ordered operation records plus an operation-cost counter."""

    def __init__(self):
        self.nodes: List[Node] = []
        self.flops = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[Node]:
        return iter(self.nodes)

    def leaf(self, values, requires_grad: bool = True) -> Tensor:
        """Create an input tensor that gradients are taken with respect to."""
        array = _frozen(values)
        if not np.isfinite(array).all():
            raise RejectedInputError("Leaf tensor contains non-finite values")
        return self._append("leaf", (), array, None, requires_grad)

    def constant(self, values) -> Tensor:
        """Create a tensor that never receives a gradient."""
        array = _frozen(values)
        if not np.isfinite(array).all():
            raise RejectedInputError("Constant tensor contains non-finite values")
        return self._append("const", (), array, None, False)

    def record(
        self,
        op: str,
        inputs: Sequence[Tensor],
        value: np.ndarray,
        vjp: VJP,
        flops: int
    ) -> Tensor:
        """Append the result of an operation. Used by ops.py only."""
        for tensor in inputs:
            if tensor.tape is not self:
                raise RejectedInputError(f"{op}: operands belong to different tapes")
        array = np.asarray(value, dtype=np.float64)
        if not np.isfinite(array).all():
            raise NumericalError(f"{op} produced non-finite values")
        array.setflags(write=False)
        self.flops += int(flops)
        requires_grad = any(t.requires_grad for t in inputs)
        return self._append(
            op,
            tuple(t.node_id for t in inputs),
            array,
            vjp if requires_grad else None,
            requires_grad
        )

    def _append(self, op, inputs, value, vjp, requires_grad) -> Tensor:
        node = Node(len(self.nodes), op, inputs, value, vjp, requires_grad)
        self.nodes.append(node)
        return Tensor(self, node.node_id)


class GradientMap:
    """Gradients keyed by node id; a missing entry means a zero gradient."""

    def __init__(self, tape: Tape, grads: Dict[int, np.ndarray]):
        self._tape = tape
        self._grads = grads

    def __contains__(self, tensor: Tensor) -> bool:
        return tensor.node_id in self._grads

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        return self.get(tensor)

    def get(self, tensor: Tensor) -> np.ndarray:
        if tensor.tape is not self._tape:
            raise RejectedInputError("Tensor belongs to a different tape")
        grad = self._grads.get(tensor.node_id)
        if grad is None:
            return np.zeros_like(tensor.value)
        return grad

    def node_ids(self) -> List[int]:
        return sorted(self._grads)


def backward(tape: Tape, loss: Tensor) -> GradientMap:
    """Reverse-mode sweep from a scalar loss node.

    Args:
        tape: Tape holding the forward computation
        loss: Scalar tensor to differentiate

    Returns:
        GradientMap with d(loss)/d(node) for every node upstream of the loss
    """
    if loss.tape is not tape:
        raise RejectedInputError("Loss tensor does not belong to this tape")
    if loss.value.size != 1:
        raise RejectedInputError(f"Loss must be scalar, got shape {loss.shape}")

    grads: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.value)}
    for node in reversed(tape.nodes[:loss.node_id + 1]):
        upstream = grads.get(node.node_id)
        if upstream is None or node.vjp is None:
            continue
        for input_id, grad in zip(node.inputs, node.vjp(upstream)):
            if grad is None or not tape.nodes[input_id].requires_grad:
                continue
            previous = grads.get(input_id)
            grads[input_id] = grad if previous is None else previous + grad
    return GradientMap(tape, grads)
