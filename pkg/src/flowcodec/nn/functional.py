"""Differentiable operations on :class:`~flowcodec.nn.tensor.Tensor`.

Convolutions are evaluated through an im2col + single-BLAS-matmul path;
their backward passes reuse the same kernels, which fixes the reduction
order and keeps results reproducible bit for bit. Transposed convolution
is implemented as the exact adjoint of ``conv2d`` (a zero-stuffed
correlation with the flipped kernel), with an explicit ``output_padding``
to resolve the stride-2 shape ambiguity.

Weight conventions (documented contract):
  * ``conv2d`` weights: ``(c_out, c_in, k, k)``.
  * ``conv_transpose2d`` weights: ``(c_in, c_out, k, k)``, so that
    ``conv_transpose2d(y, w)`` is the adjoint of ``conv2d(x, w)`` for the
    same weight array.
  * Biases are carried as ``(1, c, 1, 1)`` tensors.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special as _special

from .tensor import Tensor

# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out_data = a.data + b.data

    def _backward():
        if a.requires_grad:
            a._accumulate(out.grad)
        if b.requires_grad:
            b._accumulate(out.grad)

    out = Tensor.from_op(out_data, (a, b), _backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    out_data = a.data - b.data

    def _backward():
        if a.requires_grad:
            a._accumulate(out.grad)
        if b.requires_grad:
            b._accumulate(-out.grad)

    out = Tensor.from_op(out_data, (a, b), _backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    out_data = a.data * b.data

    def _backward():
        if a.requires_grad:
            a._accumulate(out.grad * b.data)
        if b.requires_grad:
            b._accumulate(out.grad * a.data)

    out = Tensor.from_op(out_data, (a, b), _backward)
    return out


def add_scalar(a: Tensor, c: float) -> Tensor:
    out_data = a.data + a.dtype.type(c)

    def _backward():
        if a.requires_grad:
            a._accumulate(out.grad)

    out = Tensor.from_op(out_data, (a,), _backward)
    return out


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    out_data = a.data * c

    def _backward():
        if a.requires_grad:
            a._accumulate(out.grad * c)

    out = Tensor.from_op(out_data, (a,), _backward)
    return out


def pow_scalar(a: Tensor, p: float) -> Tensor:
    out_data = a.data**p

    def _backward():
        if a.requires_grad:
            a._accumulate(out.grad * p * a.data ** (p - 1.0))

    out = Tensor.from_op(out_data, (a,), _backward)
    return out


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def _backward():
        if a.requires_grad:
            a._accumulate(out.grad * out_data)

    out = Tensor.from_op(out_data, (a,), _backward)
    return out


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)

    def _backward():
        if a.requires_grad:
            a._accumulate(out.grad / a.data)

    out = Tensor.from_op(out_data, (a,), _backward)
    return out


def erf(a: Tensor) -> Tensor:
    out_data = _special.erf(a.data).astype(a.dtype, copy=False)
    coeff = a.dtype.type(2.0 / np.sqrt(np.pi))

    def _backward():
        if a.requires_grad:
            a._accumulate(out.grad * coeff * np.exp(-a.data * a.data))

    out = Tensor.from_op(out_data, (a,), _backward)
    return out


def gaussian_cdf(a: Tensor) -> Tensor:
    """Standard normal CDF, composed from erf."""
    return mul_scalar(add_scalar(erf(mul_scalar(a, 1.0 / np.sqrt(2.0))), 1.0), 0.5)


def softplus(a: Tensor) -> Tensor:
    out_data = np.logaddexp(a.dtype.type(0.0), a.data)

    def _backward():
        if a.requires_grad:
            a._accumulate(out.grad * _special.expit(a.data))

    out = Tensor.from_op(out_data, (a,), _backward)
    return out


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    pos = a.data >= 0
    out_data = np.where(pos, a.data, a.dtype.type(slope) * a.data)

    def _backward():
        if a.requires_grad:
            a._accumulate(out.grad * np.where(pos, a.dtype.type(1.0), a.dtype.type(slope)))

    out = Tensor.from_op(out_data, (a,), _backward)
    return out


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); gradient passes only where a >= floor."""
    keep = a.data >= floor
    out_data = np.where(keep, a.data, a.dtype.type(floor))

    def _backward():
        if a.requires_grad:
            a._accumulate(out.grad * keep)

    out = Tensor.from_op(out_data, (a,), _backward)
    return out


def round_ste(a: Tensor) -> Tensor:
    """Round to nearest (ties away from zero) with a straight-through gradient."""
    out_data = _round_half_away(a.data)

    def _backward():
        if a.requires_grad:
            a._accumulate(out.grad)

    out = Tensor.from_op(out_data, (a,), _backward)
    return out


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


# ---------------------------------------------------------------------------
# reductions and reshapes
# ---------------------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    out_data = a.data.sum(dtype=a.dtype).reshape(1, 1, 1, 1)

    def _backward():
        if a.requires_grad:
            a._accumulate(np.broadcast_to(out.grad, a.shape).copy())

    out = Tensor.from_op(out_data, (a,), _backward)
    return out


def mean_all(a: Tensor) -> Tensor:
    return mul_scalar(sum_all(a), 1.0 / a.data.size)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"concat_channels: batch/spatial mismatch {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out_data = np.concatenate([a.data, b.data], axis=1)

    def _backward():
        if a.requires_grad:
            a._accumulate(out.grad[:, :ca])
        if b.requires_grad:
            b._accumulate(out.grad[:, ca:])

    out = Tensor.from_op(out_data, (a, b), _backward)
    return out


def slice_channels(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.shape[1]:
        raise ValueError(f"slice_channels: invalid range [{start}, {stop}) for {a.shape[1]} channels")
    out_data = a.data[:, start:stop].copy()

    def _backward():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[:, start:stop] = out.grad
            a._accumulate(g)

    out = Tensor.from_op(out_data, (a,), _backward)
    return out


def mul_mask(a: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a constant (batch|1, 1, h, w) mask, broadcast across channels."""
    mask = np.asarray(mask)
    if mask.ndim != 4 or mask.shape[1] != 1 or mask.shape[2:] != a.shape[2:]:
        raise ValueError(f"mask extents {mask.shape} do not match tensor {a.shape}")
    if mask.shape[0] not in (1, a.shape[0]):
        raise ValueError(f"mask batch {mask.shape[0]} incompatible with tensor batch {a.shape[0]}")
    m = mask.astype(a.dtype, copy=False)
    out_data = a.data * m

    def _backward():
        if a.requires_grad:
            a._accumulate(out.grad * m)

    out = Tensor.from_op(out_data, (a,), _backward)
    return out


def broadcast_spatial(a: Tensor, like_shape: tuple[int, int, int, int]) -> Tensor:
    """Broadcast a (1, C, 1, 1) tensor over batch and spatial extents."""
    if a.shape[0] != 1 or a.shape[2:] != (1, 1) or a.shape[1] != like_shape[1]:
        raise ValueError(f"cannot broadcast {a.shape} to {like_shape}")
    out_data = np.broadcast_to(a.data, like_shape).copy()

    def _backward():
        if a.requires_grad:
            a._accumulate(out.grad.sum(axis=(0, 2, 3), keepdims=True))

    out = Tensor.from_op(out_data, (a,), _backward)
    return out


def upsample_nearest2(a: Tensor) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling; backward is 2x2 sum pooling."""
    out_data = a.data.repeat(2, axis=2).repeat(2, axis=3)

    def _backward():
        if a.requires_grad:
            g = out.grad
            b_, c_, h_, w_ = a.shape
            a._accumulate(g.reshape(b_, c_, h_, 2, w_, 2).sum(axis=(3, 5)))

    out = Tensor.from_op(out_data, (a,), _backward)
    return out


# ---------------------------------------------------------------------------
# convolution kernels (shared by forward and backward passes)
# ---------------------------------------------------------------------------


def _im2col(x: np.ndarray, k: int, stride: int, padding: int) -> tuple[np.ndarray, int, int]:
    b, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = x.shape[2], x.shape[3]
    if hp < k or wp < k:
        raise ValueError(f"conv2d: kernel {k} exceeds padded input {hp}x{wp}")
    h_out = (hp - k) // stride + 1
    w_out = (wp - k) // stride + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    # (b, c, h_out, w_out, k, k) -> (b * h_out * w_out, c * k * k)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h_out * w_out, c * k * k)
    return np.ascontiguousarray(cols), h_out, w_out


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    b, c_in, _, _ = x.shape
    c_out, c_in_w, k, _ = w.shape
    if c_in != c_in_w:
        raise ValueError(f"conv2d: input has {c_in} channels but weights expect {c_in_w}")
    cols, h_out, w_out = _im2col(x, k, stride, padding)
    if h_out <= 0 or w_out <= 0:
        raise ValueError("conv2d: zero-sized output")
    out = cols @ w.reshape(c_out, -1).T
    return out.reshape(b, h_out, w_out, c_out).transpose(0, 3, 1, 2)


def _conv_weight_grad(x: np.ndarray, dy: np.ndarray, stride: int, padding: int, k: int) -> np.ndarray:
    b, c_in, _, _ = x.shape
    c_out = dy.shape[1]
    cols, h_out, w_out = _im2col(x, k, stride, padding)
    dy_flat = dy.transpose(1, 0, 2, 3).reshape(c_out, b * h_out * w_out)
    return (dy_flat @ cols).reshape(c_out, c_in, k, k)


def _conv_input_grad(
    dy: np.ndarray, w: np.ndarray, stride: int, padding: int, in_hw: tuple[int, int]
) -> np.ndarray:
    """Adjoint of _conv_forward: scatter dy back onto an input of extents in_hw."""
    c_out, c_in, k, _ = w.shape
    b, _, h_out, w_out = dy.shape
    h_in, w_in = in_hw
    if padding > k - 1:
        raise ValueError(f"padding {padding} exceeds kernel-1 ({k - 1})")
    stuffed_h = (h_out - 1) * stride + 1
    stuffed_w = (w_out - 1) * stride + 1
    top = k - 1 - padding
    bottom = h_in + padding - 1 - (h_out - 1) * stride
    right = w_in + padding - 1 - (w_out - 1) * stride
    if bottom < 0 or right < 0:
        raise ValueError("conv adjoint: output extents too small for requested input extents")
    buf = np.zeros((b, c_out, stuffed_h + top + bottom, stuffed_w + top + right), dtype=dy.dtype)
    buf[:, :, top : top + stuffed_h : stride, top : top + stuffed_w : stride] = dy
    w_flip = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    return _conv_forward(buf, w_flip, stride=1, padding=0)


# ---------------------------------------------------------------------------
# convolution ops
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, weights: Tensor, bias: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with weights (c_out, c_in, k, k)."""
    if stride < 1:
        raise ValueError(f"conv2d: stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d: padding must be non-negative, got {padding}")
    if weights.shape[2] != weights.shape[3]:
        raise ValueError(f"conv2d: kernels must be square, got {weights.shape}")
    out_data = _conv_forward(x.data, weights.data, stride, padding)
    if bias is not None:
        if bias.shape != (1, weights.shape[0], 1, 1):
            raise ValueError(f"conv2d: bias shape {bias.shape} != (1, {weights.shape[0]}, 1, 1)")
        out_data = out_data + bias.data
    k = weights.shape[2]
    in_hw = (x.shape[2], x.shape[3])

    def _backward():
        if x.requires_grad:
            x._accumulate(_conv_input_grad(out.grad, weights.data, stride, padding, in_hw))
        if weights.requires_grad:
            weights._accumulate(_conv_weight_grad(x.data, out.grad, stride, padding, k))
        if bias is not None and bias.requires_grad:
            bias._accumulate(out.grad.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1))

    parents = (x, weights) if bias is None else (x, weights, bias)
    out = Tensor.from_op(out_data, parents, _backward)
    return out


def conv_transpose2d(
    x: Tensor,
    weights: Tensor,
    bias: Tensor | None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """Adjoint of conv2d; weights (c_in, c_out, k, k)."""
    if stride < 1:
        raise ValueError(f"conv_transpose2d: stride must be positive, got {stride}")
    if not 0 <= output_padding < stride:
        raise ValueError(f"conv_transpose2d: output_padding must lie in [0, stride), got {output_padding}")
    c_in, c_out, k, k2 = weights.shape
    if k != k2:
        raise ValueError(f"conv_transpose2d: kernels must be square, got {weights.shape}")
    if x.shape[1] != c_in:
        raise ValueError(f"conv_transpose2d: input has {x.shape[1]} channels but weights expect {c_in}")
    h_out = (x.shape[2] - 1) * stride - 2 * padding + k + output_padding
    w_out = (x.shape[3] - 1) * stride - 2 * padding + k + output_padding
    if h_out <= 0 or w_out <= 0:
        raise ValueError("conv_transpose2d: zero-sized output")
    out_data = _conv_input_grad(x.data, weights.data, stride, padding, (h_out, w_out))
    if bias is not None:
        if bias.shape != (1, c_out, 1, 1):
            raise ValueError(f"conv_transpose2d: bias shape {bias.shape} != (1, {c_out}, 1, 1)")
        out_data = out_data + bias.data

    def _backward():
        if x.requires_grad:
            x._accumulate(_conv_forward(out.grad, weights.data, stride, padding))
        if weights.requires_grad:
            weights._accumulate(_conv_weight_grad(out.grad, x.data, stride, padding, k))
        if bias is not None and bias.requires_grad:
            bias._accumulate(out.grad.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1))

    parents = (x, weights) if bias is None else (x, weights, bias)
    out = Tensor.from_op(out_data, parents, _backward)
    return out


# ---------------------------------------------------------------------------
# generalized divisive normalization
# ---------------------------------------------------------------------------


def gdn(x: Tensor, beta: Tensor, gamma: Tensor, inverse: bool = False) -> Tensor:
    """(I)GDN with exponent 1/2: out_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2).

    ``beta`` is carried as (1, C, 1, 1), ``gamma`` as (C, C, 1, 1); both must
    already be reparametrized to beta > 0, gamma >= 0.
    """
    c = x.shape[1]
    if beta.shape != (1, c, 1, 1):
        raise ValueError(f"gdn: beta shape {beta.shape} != (1, {c}, 1, 1)")
    if gamma.shape != (c, c, 1, 1):
        raise ValueError(f"gdn: gamma shape {gamma.shape} != ({c}, {c}, 1, 1)")
    if float(beta.data.min()) <= 0.0:
        raise ValueError("gdn: beta must be strictly positive after reparametrization")
    if float(gamma.data.min()) < 0.0:
        raise ValueError("gdn: gamma must be non-negative after reparametrization")
    pooled = conv2d(mul(x, x), gamma, beta)
    d = pow_scalar(pooled, 0.5 if inverse else -0.5)
    return mul(x, d)
