"""ADAM and the learning-rate schedule."""

from __future__ import annotations

from collections.abc import Sequence
from logging import getLogger

import numpy as np

from .tensor import Parameter
from .utils import SrdkError

logger = getLogger(__name__)


class DivergenceError(SrdkError, RuntimeError):
    """Non-finite loss or gradient, naming the offender."""

    def __init__(self, message: str, term: str):
        """__init__."""
        super().__init__(message)
        self.term = term


class AdamState:
    """First and second moments per parameter name, and the step count."""

    def __init__(
        self,
        *,
        m: dict[str, np.ndarray] | None = None,
        v: dict[str, np.ndarray] | None = None,
        t: int = 0,
    ):
        """__init__."""
        self.m = {} if m is None else m
        self.v = {} if v is None else v
        self.t = t

    def __repr__(self) -> str:
        """__repr__."""
        return f"AdamState(t={self.t}, parameters={len(self.m)})"

    @classmethod
    def for_parameters(cls, parameters: Sequence[Parameter]) -> AdamState:
        """Return zero moments for every parameter."""
        return cls(
            m={p.name: np.zeros(p.shape) for p in parameters},  # type: ignore
            v={p.name: np.zeros(p.shape) for p in parameters},  # type: ignore
        )


def adam_step(  # pylint: disable=too-many-arguments
    parameters: Sequence[Parameter],
    state: AdamState,
    lr_t: float,
    *,
    beta1: float = 0.9,
    beta2: float = 0.99,
    epsilon: float = 1e-8,
) -> None:
    """Bias-corrected ADAM update from each parameter's grad."""
    for p in parameters:
        assert p.grad is not None
        if not np.all(np.isfinite(p.grad)):
            raise DivergenceError(
                f"Non-finite gradient in {p.name} at step {state.t + 1}",
                str(p.name),
            )
    state.t += 1
    correction1 = 1.0 - beta1**state.t
    correction2 = 1.0 - beta2**state.t
    for p in parameters:
        name = str(p.name)
        g = p.grad
        assert g is not None
        if name not in state.m:
            state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= lr_t * m_hat / (np.sqrt(v_hat) + epsilon)


def lr_at(epoch: int, lr: float, halve_at_epoch: int) -> float:
    """Return lr before halve_at_epoch and lr / 2 from then on."""
    if epoch < halve_at_epoch:
        return lr
    return lr / 2.0


def global_norm(parameters: Sequence[Parameter]) -> float:
    """Return the L2 norm of all gradients."""
    total = 0.0
    for p in parameters:
        assert p.grad is not None
        total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def clip_grad_norm(parameters: Sequence[Parameter], max_norm: float) -> float:
    """Rescale gradients so their global norm is at most max_norm."""
    norm = global_norm(parameters)
    if norm > max_norm > 0.0:
        factor = max_norm / norm
        for p in parameters:
            assert p.grad is not None
            p.grad *= factor
    return norm
