"""Tensor and reverse-mode tape.

Every differentiable op computes its forward value with numpy and records
a node on the active ``Tape`` together with a vector-jacobian closure.
Nodes are appended in execution order, so the tape is topological by
construction and ``Tape.backward`` is a single reverse sweep.
"""

from __future__ import annotations

from collections.abc import Callable, Generator, Sequence
from contextlib import contextmanager
from logging import getLogger
from threading import local
from typing import Any

import numpy as np

from .utils import SrdkError

logger = getLogger(__name__)

VJP = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class InvalidShapeError(SrdkError, ValueError):
    """Invalid shape."""


class DegenerateInputError(SrdkError, ValueError):
    """Degenerate input."""


class ContractError(SrdkError, RuntimeError):
    """Contract violated."""


class Tensor:
    """Dense float64 array with an optional handle into a tape."""

    def __init__(
        self,
        data: Any,
        *,
        requires_grad: bool = False,
        name: str | None = None,
    ) -> None:
        """__init__."""
        self.data = np.array(data, dtype=np.float64, order="C")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.tape: Tape | None = None
        self.tape_id: int | None = None

    @classmethod
    def wrap(cls, data: np.ndarray) -> Tensor:
        """Wrap a float64 array without copying."""
        result = cls.__new__(cls)
        result.data = np.asarray(data, dtype=np.float64, order="C")
        result.requires_grad = False
        result.grad = None
        result.name = None
        result.tape = None
        result.tape_id = None
        return result

    def __repr__(self) -> str:
        """__repr__."""
        return f"Tensor(shape={self.shape}, name={self.name})"

    @property
    def shape(self) -> tuple[int, ...]:
        """Return shape."""
        return self.data.shape

    @property
    def numel(self) -> int:
        """Return element count."""
        return int(self.data.size)

    def detach(self) -> Tensor:
        """Return a copy outside of any tape."""
        return Tensor(self.data.copy(), name=self.name)

    def item(self) -> float:
        """Return the value of a single element tensor."""
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Return the underlying array."""
        return self.data


class Parameter(Tensor):
    """Trainable tensor with a named gradient accumulator."""

    def __init__(self, data: Any, *, name: str) -> None:
        """__init__.

        The parameter takes ownership of data without copying.
        """
        super().__init__((), requires_grad=True, name=name)
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad = np.zeros(self.data.shape)

    def __repr__(self) -> str:
        """__repr__."""
        return f"Parameter(shape={self.shape}, name={self.name})"

    def zero_grad(self) -> None:
        """Reset the gradient accumulator."""
        self.grad = np.zeros(self.data.shape)


class Node:  # pylint: disable=too-few-public-methods
    """Tape node."""

    def __init__(
        self,
        op: str,
        inputs: tuple[Tensor, ...],
        output: Tensor,
        vjp: VJP,
    ) -> None:
        """__init__."""
        self.op = op
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class _Recording(local):  # pylint: disable=too-few-public-methods
    """Per-thread stack of active tapes; None suspends recording."""

    def __init__(self) -> None:
        """__init__."""
        super().__init__()
        self.stack: list[Tape | None] = []


_RECORDING = _Recording()


class Tape:
    """Ordered record of differentiable ops.

    Entering a tape activates it for the current thread only.
    """

    def __init__(self) -> None:
        """__init__."""
        self.nodes: list[Node] = []
        self.parameters: dict[int, Parameter] = {}

    def __enter__(self) -> Tape:
        """__enter__."""
        _RECORDING.stack.append(self)
        return self

    def __exit__(self, *args) -> None:
        """__exit__."""
        _RECORDING.stack.pop()

    def record(
        self,
        op: str,
        inputs: tuple[Tensor, ...],
        output: Tensor,
        vjp: VJP,
    ) -> None:
        """Record op producing output from inputs."""
        for each in inputs:
            if isinstance(each, Parameter):
                self.parameters[id(each)] = each
        output.requires_grad = True
        output.tape = self
        output.tape_id = len(self.nodes)
        self.nodes.append(Node(op, inputs, output, vjp))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every reachable leaf grad."""
        if loss.shape != ():
            raise ContractError(f"Loss must be a scalar, not {loss.shape}.")
        if loss.tape is not self or loss.tape_id is None:
            raise ContractError("Loss was not produced on this tape.")
        pending: dict[int, np.ndarray] = {id(loss): np.ones(())}
        for node in reversed(self.nodes[: loss.tape_id + 1]):
            g = pending.pop(id(node.output), None)
            if g is None:
                continue
            for each, each_grad in zip(node.inputs, node.vjp(g)):
                if each_grad is None or not each.requires_grad:
                    continue
                if each.tape is self:
                    key = id(each)
                    if key in pending:
                        pending[key] = pending[key] + each_grad
                    else:
                        pending[key] = each_grad
                    continue
                if each.grad is None:
                    each.grad = np.array(each_grad, dtype=np.float64)
                else:
                    each.grad += each_grad


def active_tape() -> Tape | None:
    """Return the innermost active tape, None when recording is off."""
    if not _RECORDING.stack:
        return None
    return _RECORDING.stack[-1]


@contextmanager
def no_grad() -> Generator[None]:
    """Suspend recording; ops inside produce constants."""
    _RECORDING.stack.append(None)
    try:
        yield
    finally:
        _RECORDING.stack.pop()


def record(
    op: str,
    inputs: tuple[Tensor, ...],
    data: np.ndarray,
    vjp: VJP,
) -> Tensor:
    """Wrap forward data and record it when any input requires grad."""
    output = Tensor.wrap(data)
    tape = active_tape()
    if tape is not None and any(each.requires_grad for each in inputs):
        tape.record(op, inputs, output, vjp)
    return output


def backward(loss: Tensor) -> None:
    """Backpropagate a scalar loss through the tape that produced it."""
    if loss.tape is None:
        raise ContractError("Loss is not on a tape.")
    loss.tape.backward(loss)


def zero_grad(parameters: Sequence[Parameter]) -> None:
    """Reset gradient accumulators."""
    for each in parameters:
        each.zero_grad()
