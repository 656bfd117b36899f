"""Adam optimizer and gradient accumulation for the autodiff engine."""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
import logging

import numpy as np

from .autodiff import Array, Tensor
from .const import ADAM_BETA1, ADAM_BETA2, ADAM_EPS
from .exceptions import ShapeError

_LOGGER = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the step counter."""

    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)
    t: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    skipped: int = 0

    @classmethod
    def create(cls, params: Mapping[str, Tensor], **kwargs: float) -> AdamState:
        """Return a zeroed state shaped like params."""
        state = cls(**kwargs)  # type: ignore[arg-type]
        for name, param in params.items():
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        return state


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Array],
    state: AdamState,
    lr: float,
) -> bool:
    """Apply one bias-corrected Adam update.

    Parameter data is replaced, never mutated in place, so tensors captured
    by an earlier forward pass keep their values.

    Returns:
        True when the update was applied, False when it was skipped because a
        gradient was non-finite (state.t is left unchanged in that case)
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.data.shape:
            raise ShapeError("adam_step", param.data.shape, grad.shape, detail=name)
        if name not in state.m:
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
    bad = [name for name, grad in grads.items() if not np.all(np.isfinite(grad))]
    if bad:
        state.skipped += 1
        _LOGGER.warning(
            "Skipping Adam step %d: non-finite gradients in %s",
            state.t + 1,
            ", ".join(sorted(bad)[:5]),
        )
        return False

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.t
    correction2 = 1.0 - b2**state.t
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        dtype = param.data.dtype
        m = b1 * state.m[name] + (1.0 - b1) * grad
        v = b2 * state.v[name] + (1.0 - b2) * grad * grad
        state.m[name], state.v[name] = m.astype(dtype), v.astype(dtype)
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        param.data = (param.data - update).astype(dtype)
    return True


class GradientAccumulator:
    """Sum leaf gradients over micro-batches and average before stepping."""

    def __init__(self, params: Mapping[str, Tensor]) -> None:
        """Initialize for the given parameter set."""
        self._params = params
        self._sums: dict[str, Array] = {}
        self.count = 0

    def collect(self) -> None:
        """Add the current gradients to the running sums and clear them."""
        for name, param in self._params.items():
            grad = param.grad if param.grad is not None else np.zeros_like(param.data)
            if name in self._sums:
                self._sums[name] = self._sums[name] + grad
            else:
                self._sums[name] = np.array(grad, copy=True)
            param.zero_grad()
        self.count += 1

    def averaged(self) -> dict[str, Array]:
        """Return the summed gradients divided by the micro-batch count."""
        if self.count == 0:
            return {}
        return {name: total / total.dtype.type(self.count) for name, total in self._sums.items()}

    def reset(self) -> None:
        """Drop the running sums."""
        self._sums = {}
        self.count = 0


def zero_grads(params: Iterable[Tensor]) -> None:
    """Clear the gradient buffer of every tensor."""
    for param in params:
        param.zero_grad()
