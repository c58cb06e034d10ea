"""Context-free per-channel density for the side-information latents.

Each channel owns a learnable Gaussian (mean plus softplus-floored scale);
its integer-interval mass provides both the training rate and the static
per-channel coding tables. Being context-free the tables depend only on
the checkpoint, which is what lets the side stream bootstrap decoding.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from ..nn import functional as F
from ..nn.layers import Module
from ..nn.tensor import Parameter, Tensor

from .gmm import N_SYMBOLS, SUPPORT_MIN, SUPPORT_MAX, SIGMA_MIN, build_cumulative


class FactorizedDensity(Module):
    def __init__(self, channels: int, dtype=np.float32):
        self.channels = channels
        self.mean = Parameter(np.zeros((1, channels, 1, 1), dtype))
        self.scale_raw = Parameter(np.full((1, channels, 1, 1), 0.54, dtype))  # softplus ~ 1.0

    def likelihood(self, values: Tensor) -> Tensor:
        """Interval mass around each (possibly noisy) value; differentiable."""
        if values.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {values.shape[1]}")
        mean = F.broadcast_spatial(self.mean, values.shape)
        scale_raw = F.broadcast_spatial(self.scale_raw, values.shape)
        scale = F.add_scalar(F.softplus(scale_raw), SIGMA_MIN)
        inv = F.pow_scalar(scale, -1.0)
        centered = F.sub(values, mean)
        upper = F.gaussian_cdf(F.mul(F.add_scalar(centered, 0.5), inv))
        lower = F.gaussian_cdf(F.mul(F.add_scalar(centered, -0.5), inv))
        return F.sub(upper, lower)

    def channel_tables(self) -> list[np.ndarray]:
        """One 16-bit cumulative table per channel (decoder-identical)."""
        mu = self.mean.data.reshape(-1).astype(np.float64)
        sd = np.logaddexp(0.0, self.scale_raw.data.reshape(-1).astype(np.float64)) + SIGMA_MIN
        grid = np.arange(SUPPORT_MIN, SUPPORT_MAX + 1, dtype=np.float64)
        tables = []
        for c in range(self.channels):
            upper = ndtr((grid + 0.5 - mu[c]) / sd[c])
            lower = ndtr((grid - 0.5 - mu[c]) / sd[c])
            tables.append(build_cumulative(upper - lower))
        return tables
