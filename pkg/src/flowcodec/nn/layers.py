"""Parameter-holding layers built on the functional ops."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Parameter, Tensor

GDN_BETA_MIN = 1e-6
_GDN_PEDESTAL = 2.0**-18


class Module:
    """Minimal parameter container; children are discovered by attribute walk."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}" if not prefix else f"{prefix}.{name}"
            if isinstance(value, Parameter):
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(key)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}")
                    elif isinstance(item, Parameter):
                        yield f"{key}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def _he_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, stride=1, padding=0, *, rng: np.random.Generator,
                 zero_init: bool = False, dtype=np.float32):
        self.stride = stride
        self.padding = padding
        fan_in = c_in * kernel * kernel
        w = np.zeros((c_out, c_in, kernel, kernel), dtype) if zero_init else _he_init(
            rng, (c_out, c_in, kernel, kernel), fan_in, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros((1, c_out, 1, 1), dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, c_in, c_out, kernel, stride=1, padding=0, output_padding=0, *,
                 rng: np.random.Generator, zero_init: bool = False, dtype=np.float32):
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding
        fan_in = c_in * kernel * kernel
        w = np.zeros((c_in, c_out, kernel, kernel), dtype) if zero_init else _he_init(
            rng, (c_in, c_out, kernel, kernel), fan_in, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros((1, c_out, 1, 1), dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding,
                                  self.output_padding)


class GDN(Module):
    """Generalized divisive normalization (and its inverse).

    Raw parameters are stored so that beta = beta_raw^2 + GDN_BETA_MIN and
    gamma = gamma_raw^2, keeping the denominator positive without clamping.
    A small pedestal in the initial raw values keeps gradients alive at the
    gamma = 0 boundary.
    """

    def __init__(self, channels: int, inverse: bool = False, dtype=np.float32):
        self.inverse = inverse
        beta0 = np.ones((1, channels, 1, 1), dtype)
        gamma0 = 0.1 * np.eye(channels, dtype=dtype).reshape(channels, channels, 1, 1)
        self.beta_raw = Parameter(np.sqrt(np.maximum(beta0 - GDN_BETA_MIN, _GDN_PEDESTAL)))
        self.gamma_raw = Parameter(np.sqrt(gamma0 + _GDN_PEDESTAL))

    def effective_params(self) -> tuple[Tensor, Tensor]:
        beta = F.add_scalar(F.mul(self.beta_raw, self.beta_raw), GDN_BETA_MIN)
        gamma = F.mul(self.gamma_raw, self.gamma_raw)
        return beta, gamma

    def __call__(self, x: Tensor) -> Tensor:
        beta, gamma = self.effective_params()
        return F.gdn(x, beta, gamma, self.inverse)


class MaskedConv2d(Module):
    """Strictly causal convolution: position p sees only raster positions < p.

    The kernel mask zeroes the centre tap and everything after it, so the
    output at p never depends on the symbol at p or later.
    """

    def __init__(self, c_in, c_out, kernel=5, *, rng: np.random.Generator, dtype=np.float32):
        if kernel % 2 == 0:
            raise ValueError("masked convolution needs an odd kernel")
        self.padding = kernel // 2
        fan_in = c_in * kernel * kernel
        self.weight = Parameter(_he_init(rng, (c_out, c_in, kernel, kernel), fan_in, dtype))
        self.bias = Parameter(np.zeros((1, c_out, 1, 1), dtype))
        mask = np.ones((kernel, kernel), dtype)
        mask[kernel // 2, kernel // 2 :] = 0.0
        mask[kernel // 2 + 1 :, :] = 0.0
        self.kernel_mask = mask.reshape(1, 1, kernel, kernel)

    def masked_weight(self) -> Tensor:
        mask = Tensor(np.broadcast_to(self.kernel_mask, self.weight.shape).astype(self.weight.dtype))
        return F.mul(self.weight, mask)

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.masked_weight(), self.bias, 1, self.padding)
