"""Dense tensors and the reverse-mode tape.

Operations record onto the innermost active :class:`Tape`; outside any tape
they only compute forward values. ``backward`` walks the tape of its root in
exact reverse order and accumulates into ``grad`` of every tensor that requires
gradients, so calling it twice without :meth:`Tensor.zero_grad` doubles grads.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import NotScalarRoot

LOGGER = logging.getLogger(__name__)

BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """An N-dimensional array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "tape", "name")

    def __init__(
        self,
        data: np.ndarray,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype: Optional[np.dtype] = None,
    ) -> None:
        array = np.asarray(data, dtype=dtype)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float32)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.tape: Optional[Tape] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"


@dataclass
class TapeEntry:
    """One executed primitive: its inputs, output and backward rule."""

    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardRule


@dataclass
class Tape:
    """Ordered record of the primitives executed while it is active."""

    entries: List[TapeEntry] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc_info: object) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, backward: BackwardRule) -> None:
        output.tape = self
        self.entries.append(TapeEntry(op=op, inputs=inputs, output=output, backward=backward))


_ACTIVE_TAPES: List[Tape] = []


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def make_output(
    op: str, data: np.ndarray, inputs: Tuple[Tensor, ...], backward: BackwardRule
) -> Tensor:
    """Wrap ``data`` as the output of ``op``, recording it when a tape is active."""

    requires_grad = any(tensor.requires_grad for tensor in inputs)
    output = Tensor(data, requires_grad=requires_grad)
    tape = active_tape()
    if tape is not None and requires_grad:
        tape.record(op, inputs, output, backward)
    return output


def backward(root: Tensor) -> None:
    """Populate ``grad`` for every gradient-requiring ancestor of scalar ``root``."""

    if root.size != 1:
        raise NotScalarRoot(f"backward() needs a scalar root, got shape {root.shape}")
    if root.tape is None:
        raise NotScalarRoot("backward() root was not produced on a tape")
    pending: Dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    touched: Dict[int, Tensor] = {id(root): root}
    for entry in reversed(root.tape.entries):
        upstream = pending.pop(id(entry.output), None)
        if upstream is None:
            continue
        input_grads = entry.backward(upstream)
        for tensor, grad in zip(entry.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            touched[key] = tensor
            pending[key] = pending[key] + grad if key in pending else grad
            _accumulate(tensor, grad)
    _accumulate(root, np.ones_like(root.data))
    LOGGER.debug("Backward pass complete", extra={"entries": len(root.tape.entries), "tensors": len(touched)})


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    grad = grad.astype(tensor.data.dtype, copy=False).reshape(tensor.shape)
    tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad


__all__ = ["Tensor", "Tape", "TapeEntry", "active_tape", "make_output", "backward"]
