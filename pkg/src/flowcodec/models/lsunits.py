"""Latent space units: the maskable rungs of the hierarchy.

A unit downsamples the feature stream by two, emits a masked latent at the
downsampled resolution through a stride-1 head, and hands the features to
the next (deeper) unit. On the way back up each unit merges its latent
with the upsampled deeper reconstruction. The transmitting variant also
owns the machinery that prices and codes its latent: a conditional
side-information branch, a strictly causal context predictor, and the head
that fuses both into mixture parameters.
"""

from __future__ import annotations

import numpy as np

from ..entropy.factorized import FactorizedDensity
from ..entropy.gmm import K_COMPONENTS
from ..nn import functional as F
from ..nn.layers import GDN, Conv2d, ConvTranspose2d, MaskedConv2d, Module
from ..nn.tensor import Tensor
from .hierarchy import LatentHierarchy, LatentLevel, apply_mask


class LsUnitA(Module):
    """Downsample-and-emit unit without transmission machinery."""

    def __init__(self, transform_ch: int, latent_ch: int, *, rng, dtype=np.float32):
        self.down = Conv2d(transform_ch, transform_ch, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.down_gdn = GDN(transform_ch, dtype=dtype)
        self.latent_head = Conv2d(transform_ch, latent_ch, 3, stride=1, padding=1, rng=rng, dtype=dtype)
        self.merge_head = Conv2d(latent_ch + transform_ch, transform_ch, 3, stride=1, padding=1,
                                 rng=rng, dtype=dtype)
        self.up_gdn = GDN(transform_ch, inverse=True, dtype=dtype)
        self.up = ConvTranspose2d(transform_ch, transform_ch, 3, stride=2, padding=1,
                                  output_padding=1, rng=rng, dtype=dtype)
        self.transform_ch = transform_ch
        self.latent_ch = latent_ch

    codes_latent = False

    def descend(self, features: Tensor) -> Tensor:
        return self.down_gdn(self.down(features))

    def emit(self, features: Tensor) -> Tensor:
        return self.latent_head(features)

    def ascend(self, latent: Tensor, deeper: Tensor) -> Tensor:
        merged = self.merge_head(F.concat_channels(latent, deeper))
        return self.up(self.up_gdn(merged))


class LsUnitB(LsUnitA):
    """Transmitting unit: adds quantization pricing and coding machinery.

    ``conditioned`` units receive the 2x-upsampled dequantized latent of
    the next-deeper level, concatenated to the first side-information
    encoding layer and to the last decoding layer.
    """

    codes_latent = True

    def __init__(self, transform_ch: int, latent_ch: int, *, conditioned: bool, rng,
                 dtype=np.float32):
        super().__init__(transform_ch, latent_ch, rng=rng, dtype=dtype)
        self.conditioned = conditioned
        cond_ch = latent_ch if conditioned else 0
        self.hyper_enc1 = Conv2d(latent_ch + cond_ch, transform_ch, 3, stride=1, padding=1,
                                 rng=rng, dtype=dtype)
        self.hyper_enc2 = Conv2d(transform_ch, transform_ch, 3, stride=2, padding=1,
                                 rng=rng, dtype=dtype)
        self.hyper_dec1 = ConvTranspose2d(transform_ch, transform_ch, 3, stride=2, padding=1,
                                          output_padding=1, rng=rng, dtype=dtype)
        self.hyper_dec2 = Conv2d(transform_ch + cond_ch, transform_ch, 3, stride=1, padding=1,
                                 rng=rng, dtype=dtype)
        self.hyper_density = FactorizedDensity(transform_ch, dtype=dtype)
        self.context = MaskedConv2d(latent_ch, transform_ch, 5, rng=rng, dtype=dtype)
        self.gmm_fuse = Conv2d(2 * transform_ch, 2 * transform_ch, 1, rng=rng, dtype=dtype)
        self.gmm_out = Conv2d(2 * transform_ch, 3 * K_COMPONENTS * latent_ch, 1, rng=rng, dtype=dtype)

    def hyper_analyze(self, latent: Tensor, conditioning: Tensor | None) -> Tensor:
        if self.conditioned != (conditioning is not None):
            raise ValueError("conditioning signal does not match the unit's wiring")
        x = latent if conditioning is None else F.concat_channels(latent, conditioning)
        return self.hyper_enc2(F.leaky_relu(self.hyper_enc1(x)))

    def hyper_synthesize(self, hyper_latent: Tensor, conditioning: Tensor | None) -> Tensor:
        if self.conditioned != (conditioning is not None):
            raise ValueError("conditioning signal does not match the unit's wiring")
        x = F.leaky_relu(self.hyper_dec1(hyper_latent))
        if conditioning is not None:
            x = F.concat_channels(x, conditioning)
        return self.hyper_dec2(x)

    def gmm_params_raw(self, hyper_features: Tensor, context_features: Tensor) -> Tensor:
        fused = F.leaky_relu(self.gmm_fuse(F.concat_channels(hyper_features, context_features)))
        return self.gmm_out(fused)


def lsunit_chain_analyze(units, features: Tensor, masks, quantize: bool = False,
                         prev: LatentHierarchy | None = None) -> tuple[LatentHierarchy, Tensor]:
    """Run the descend/emit chain; deepest features are returned unused.

    Emissions are masked at their level; when ``prev`` carries the state of
    an earlier flow step it is added in (additive coupling realized inside
    the chain). ``quantize`` rounds transmitting levels after accumulation.
    """
    levels = []
    f = features
    for i, unit in enumerate(units):
        level = i + 1
        mask = masks.level_mask(level)
        f = unit.descend(f)
        emission = apply_mask(unit.emit(f), mask, level)
        state = emission if prev is None else F.add(prev[i].latent, emission)
        quantized = False
        if quantize:
            if not unit.codes_latent:
                raise ValueError("quantization requested on a non-transmitting unit")
            state = apply_mask(F.round_ste(state), mask, level).detach()
            quantized = True
        mask_applied = quantized or prev is None or prev[i].mask_applied
        levels.append(LatentLevel(state, level, quantized, mask_applied))
    return LatentHierarchy(levels), f


def lsunit_chain_emissions(units, features: Tensor, masks) -> list[Tensor]:
    """Masked per-level emissions only (used to invert the coupling)."""
    hierarchy, _ = lsunit_chain_analyze(units, features, masks)
    return hierarchy.tensors()


def lsunit_chain_synthesize(units, latents: LatentHierarchy, masks=None) -> Tensor:
    """Deepest unit first; its missing deeper input is a zero feature map."""
    if len(latents) != len(units):
        raise ValueError(f"{len(units)} units but {len(latents)} latent levels")
    if masks is not None:
        for entry in latents.levels:
            mask = masks.level_mask(entry.level)
            if mask.shape[2:] != entry.latent.shape[2:]:
                raise ValueError(
                    f"level-{entry.level} mask extents {mask.shape[2:]} do not match "
                    f"latent {entry.latent.shape[2:]}"
                )
    deepest = latents[len(units) - 1].latent
    deeper = Tensor(np.zeros((deepest.shape[0], units[-1].transform_ch) + deepest.shape[2:],
                             dtype=deepest.dtype))
    for i in range(len(units) - 1, -1, -1):
        deeper = units[i].ascend(latents[i].latent, deeper)
    return deeper
