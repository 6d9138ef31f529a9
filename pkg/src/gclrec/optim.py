"""Adam optimizer over autodiff parameter tensors.

Weight decay is applied as an additive lambda*theta term on the gradient
before the moment updates. Grad buffers are cleared after each step.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ContractError


class AdamState:
    def __init__(
        self,
        params: list[Tensor],
        learning_rate: float = 0.005,
        weight_decay: float = 1e-5,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.params = list(params)
        for p in self.params:
            if not p.requires_grad:
                raise ContractError(f"optimizer given a non-trainable tensor {p.name!r}")
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]


def adam_step(state: AdamState, params: list[Tensor] | None = None) -> None:
    """Advance every parameter by one Adam update; clears grads afterward."""
    if params is not None and any(a is not b for a, b in zip(params, state.params)):
        raise ContractError("adam_step: params do not match the optimizer state")
    for p in state.params:
        if p.grad is None:
            raise ContractError(f"adam_step: missing grad on parameter {p.name!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for i, p in enumerate(state.params):
        g = p.grad + state.weight_decay * p.data
        state._m[i] = b1 * state._m[i] + (1.0 - b1) * g
        state._v[i] = b2 * state._v[i] + (1.0 - b2) * (g * g)
        m_hat = state._m[i] / (1.0 - b1**t)
        v_hat = state._v[i] / (1.0 - b2**t)
        new = p.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        new.setflags(write=False)
        p.data = new
        p.grad = None
