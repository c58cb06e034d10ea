"""Invertible single-scale to two-scale latent transform.

The coarse latent is a learned stride-2 projection of the input; the fine
latent is the input minus a learned reconstruction from the coarse one.
Adding that reconstruction back recovers the input exactly for any
parameter values, which is what keeps the whole flow invertible.
"""

from __future__ import annotations

import numpy as np

from ..nn import functional as F
from ..nn.layers import Conv2d, ConvTranspose2d, Module
from ..nn.tensor import Tensor


class SplitParams(Module):
    def __init__(self, latent_ch: int, *, rng, dtype=np.float32):
        self.enc_down = Conv2d(latent_ch, latent_ch, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.enc_out = Conv2d(latent_ch, latent_ch, 3, stride=1, padding=1, rng=rng, dtype=dtype)
        self.dec_up = ConvTranspose2d(latent_ch, latent_ch, 3, stride=2, padding=1,
                                      output_padding=1, rng=rng, dtype=dtype)
        self.dec_out = Conv2d(latent_ch, latent_ch, 3, stride=1, padding=1, rng=rng, dtype=dtype)

    def encode_half(self, z: Tensor) -> Tensor:
        return self.enc_out(F.leaky_relu(self.enc_down(z)))

    def decode_full(self, z_half: Tensor) -> Tensor:
        return self.dec_out(F.leaky_relu(self.dec_up(z_half)))


def latent_split(z1: Tensor, params: SplitParams) -> tuple[Tensor, Tensor]:
    """(fine, coarse) with coarse at half resolution; exact inverse of merge."""
    if z1.shape[2] % 2 or z1.shape[3] % 2:
        raise ValueError(f"split needs even extents, got {z1.shape[2:]} (pad upstream)")
    z12 = params.encode_half(z1)
    z11 = F.sub(z1, params.decode_full(z12))
    return z11, z12


def latent_merge(z11: Tensor, z12: Tensor, params: SplitParams) -> Tensor:
    if (z11.shape[2] != 2 * z12.shape[2]) or (z11.shape[3] != 2 * z12.shape[3]):
        raise ValueError(f"merge shapes disagree: fine {z11.shape[2:]} vs coarse {z12.shape[2:]}")
    return F.add(z11, params.decode_full(z12))
