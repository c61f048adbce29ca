"""
反向模式微分记录 (Reverse-mode differentiation record).

Operations executed inside `record_forward()` append a node to the active
tape; `backward` replays the nodes in exact reverse recording order.
"""
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence

import numpy as np

from diffcore.dc_tensor import Parameter, Tensor
from utils.errors import GradientError, ShapeError

_state = threading.local()


@dataclass
class Node:
    id: int
    op: str
    inputs: List[Optional[int]]
    vjp: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
    param: Optional[Parameter] = None


@dataclass
class Tape:
    nodes: List[Node] = field(default_factory=list)
    leaves: Dict[int, int] = field(default_factory=dict)

    def leaf(self, param: Parameter) -> int:
        key = id(param)
        if key not in self.leaves:
            node = Node(id=len(self.nodes), op="parameter", inputs=[], param=param)
            self.nodes.append(node)
            self.leaves[key] = node.id
        return self.leaves[key]

    def node_of(self, t: Tensor) -> Optional[int]:
        if isinstance(t, Parameter) and t.requires_grad:
            return self.leaf(t)
        if t.tape is self:
            return t.node
        return None

    @property
    def params(self) -> List[Parameter]:
        return [n.param for n in self.nodes if n.param is not None]

    def __len__(self):
        return len(self.nodes)


def active_tape() -> Optional[Tape]:
    return getattr(_state, "tape", None)


@contextmanager
def record_forward() -> Iterator[Tape]:
    """Activates a fresh tape for the current thread for the duration of the block."""
    tape = Tape()
    previous = active_tape()
    _state.tape = tape
    try:
        yield tape
    finally:
        _state.tape = previous


@contextmanager
def no_record() -> Iterator[None]:
    previous = active_tape()
    _state.tape = None
    try:
        yield
    finally:
        _state.tape = previous


def record(op: str, out: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Wraps an op result and, if any input is tracked on the active tape, appends its node."""
    result = Tensor(out)
    tape = active_tape()
    if tape is None:
        return result
    ids = [tape.node_of(t) for t in inputs]
    if all(i is None for i in ids):
        return result
    node = Node(id=len(tape.nodes), op=op, inputs=ids, vjp=vjp)
    tape.nodes.append(node)
    result.node = node.id
    result.tape = tape
    return result


def backward(tape: Tape, loss: Tensor) -> Dict[str, np.ndarray]:
    """
    Accumulates d(loss)/d(param) into every parameter recorded on the tape.

    Args:
        tape (Tape): The tape the loss was recorded on.
        loss (Tensor): Real scalar (single element) output.

    Returns:
        Dict[str, np.ndarray]: Copies of the accumulated gradients by parameter
        name. Parameters the loss does not reach keep a zero gradient.
    """
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if loss.is_complex:
        raise GradientError("loss must be real")

    if loss.tape is tape and loss.node is not None:
        grads: Dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
        for node in reversed(tape.nodes):
            g = grads.pop(node.id, None)
            if g is None:
                continue
            if node.param is not None:
                p = node.param
                p.grad += g if np.iscomplexobj(p.data) else np.real(g).astype(p.grad.dtype)
                continue
            for nid, ig in zip(node.inputs, node.vjp(g)):
                if nid is None or ig is None:
                    continue
                grads[nid] = grads[nid] + ig if nid in grads else ig

    return {p.name: p.grad.copy() for p in tape.params}


def zero_grad(params: Sequence[Parameter]):
    for p in params:
        p.zero_grad()
