"""Central finite-difference oracle shared by the gradient tests.

The oracle never touches the analytic backward pass: it re-runs the
forward function with perturbed 64-bit inputs and compares difference
quotients against the recorded gradients.
"""

from __future__ import annotations

import numpy as np

from flowcodec.nn.tensor import Tensor


def numeric_grad(fn, tensors, probes_per_tensor=10, h=1e-3, rng=None):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps the tensors to a scalar Tensor. Probe coordinates are drawn
    at random from each tensor; tensors must be float64 for the quotient to
    be trustworthy at the default step.
    """
    rng = rng or np.random.default_rng(0)
    loss = fn(*tensors)
    for t in tensors:
        t.zero_grad()
    loss = fn(*tensors)
    loss.backward()
    worst = 0.0
    for t in tensors:
        assert t.dtype == np.float64, "gradient checks run at 64-bit"
        flat = t.data.reshape(-1)
        grad = t.grad.reshape(-1) if t.grad is not None else np.zeros_like(flat)
        n = min(probes_per_tensor, flat.size)
        idx = rng.choice(flat.size, size=n, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn(*tensors).item()
            flat[i] = orig - h
            f_minus = fn(*tensors).item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            analytic = grad[i]
            scale = max(abs(numeric), abs(analytic), 1e-8)
            worst = max(worst, abs(numeric - analytic) / scale)
    return worst


def rand_tensor(rng, shape, requires_grad=True, scale=1.0, dtype=np.float64):
    return Tensor(rng.normal(0.0, scale, size=shape).astype(dtype), requires_grad=requires_grad)
