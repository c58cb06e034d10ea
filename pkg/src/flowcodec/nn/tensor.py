"""Reverse-mode autodiff over dense 4-D arrays.

Every value is a (batch, channel, height, width) float array. Operations
record a backward closure on their output node; ``backward()`` walks the
graph once in reverse topological order and accumulates gradients on the
leaves. All reductions go through a single numpy/BLAS path in C order, so
two runs on identical inputs are bit-identical.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable

import numpy as np

_GRAD_ENABLED = True


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as4d(data, dtype) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim != 4:
        raise ValueError(f"tensors are 4-D (batch, channel, height, width); got shape {arr.shape}")
    return arr


class Tensor:
    """A 4-D array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64) else np.float32
        self.data = _as4d(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) and grad_enabled()
        self._prev: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad)

    @staticmethod
    def from_op(data: np.ndarray, parents: Iterable["Tensor"], backward: Callable[[], None]) -> "Tensor":
        """Wrap an op result, recording the graph edge only when it matters."""
        parents = tuple(parents)
        needs = grad_enabled() and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=needs, dtype=data.dtype)
        if needs:
            out._prev = parents
            out._backward = backward
        return out

    # -- shape / value accessors ----------------------------------------------

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- autodiff ---------------------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from a scalar; gradients accumulate until zeroed."""
        if self.data.shape != (1, 1, 1, 1):
            raise ValueError(f"backward() requires a scalar of shape (1,1,1,1), got {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in visited:
                    stack.append((child, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar (implemented in functional.py) --------------------------

    def __add__(self, other):
        from . import functional as F

        if isinstance(other, Tensor):
            return F.add(self, other)
        return F.add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F

        if isinstance(other, Tensor):
            return F.sub(self, other)
        return F.add_scalar(self, -float(other))

    def __mul__(self, other):
        from . import functional as F

        if isinstance(other, Tensor):
            return F.mul(self, other)
        return F.mul_scalar(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import functional as F

        return F.mul_scalar(self, -1.0)

    def __pow__(self, p):
        from . import functional as F

        return F.pow_scalar(self, float(p))


class Parameter(Tensor):
    """A learnable tensor: persistent gradient plus optimizer state."""

    __slots__ = ("adam_m", "adam_v", "step_count")

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.requires_grad = True  # parameters are leaves even under no_grad()
        self.adam_m: np.ndarray | None = None
        self.adam_v: np.ndarray | None = None
        self.step_count = 0
