"""Adam with bias correction."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter


def adam_step(params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update on every parameter with a populated gradient."""
    if lr <= 0.0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for p in params:
        g = p.grad
        if g is None:
            continue
        if p.adam_m is None:
            p.adam_m = np.zeros_like(p.data)
            p.adam_v = np.zeros_like(p.data)
        p.step_count += 1
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / (1.0 - beta1**p.step_count)
        v_hat = p.adam_v / (1.0 - beta2**p.step_count)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)


class Adam:
    """Stateful wrapper used by the training loop."""

    def __init__(self, params: list[Parameter], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0.0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self) -> None:
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
