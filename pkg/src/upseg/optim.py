"""Plain SGD and Adam over lists of parameters.

Both steppers rebind each parameter's `.data` to a freshly allocated array,
so tensors already captured inside a recorded graph keep the values they
were evaluated with.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, UsageError
from .tensor import Parameter


def _check_lr(lr: float) -> float:
    lr = float(lr)
    if not lr > 0.0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    return lr


def _grad_of(param: Parameter) -> np.ndarray:
    g = param.tensor.grad
    if g is None:
        raise UsageError(f"parameter {param.name!r} has no gradient; "
                         "call zero_grads + backward before stepping")
    return g


def sgd_step(params: list[Parameter], lr: float) -> None:
    """One vanilla gradient-descent update: p <- p - lr * g."""
    lr = _check_lr(lr)
    for p in params:
        p.tensor.data = p.tensor.data - lr * _grad_of(p)


class AdamState:
    """First/second-moment accumulators plus the shared step counter."""

    def __init__(self, params: list[Parameter]):
        self.step = 0
        self.m = {p.name: np.zeros_like(p.tensor.data) for p in params}
        self.v = {p.name: np.zeros_like(p.tensor.data) for p in params}


def adam_step(params: list[Parameter], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One Adam update with bias-corrected moment estimates."""
    lr = _check_lr(lr)
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ConfigError("adam betas must lie in [0, 1)")
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for p in params:
        g = _grad_of(p)
        if p.name not in state.m:
            raise UsageError(f"parameter {p.name!r} missing from AdamState")
        m = state.m[p.name] = beta1 * state.m[p.name] + (1.0 - beta1) * g
        v = state.v[p.name] = beta2 * state.v[p.name] + (1.0 - beta2) * g * g
        p.tensor.data = p.tensor.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
