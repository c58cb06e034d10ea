"""Two-step additive coupling between the image branch and the latent branch.

Encoding runs each layer as z' = z + analysis(x), x' = x - synthesis(z');
decoding inverts the steps exactly, with the final residual replaced by
zeros at the receiver. One model variant carries the masked two-level
hierarchy through both layers; the other keeps the first layer single
scale and derives the hierarchy through the invertible latent split, so
only the transmitting layer is multiscale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..entropy.gmm import P_MIN, SIGMA_MIN
from ..nn import functional as F
from ..nn.layers import GDN, Conv2d, ConvTranspose2d, Module
from ..nn.tensor import Tensor
from .config import FlowConfig, ModelKind, PAD_MULTIPLE
from .hierarchy import LatentHierarchy, LatentLevel, apply_mask
from .lsunits import (
    LsUnitA,
    LsUnitB,
    lsunit_chain_analyze,
    lsunit_chain_emissions,
    lsunit_chain_synthesize,
)
from .split import SplitParams, latent_merge, latent_split

_LOG2 = float(np.log(2.0))
QUANT_MODES = ("none", "round", "noise", "ste")


class AnalysisStack(Module):
    """Image to features at quarter resolution (two stride-2 stages)."""

    def __init__(self, transform_ch: int, *, rng, dtype=np.float32):
        self.conv1 = Conv2d(3, transform_ch, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.gdn1 = GDN(transform_ch, dtype=dtype)
        self.conv2 = Conv2d(transform_ch, transform_ch, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.gdn2 = GDN(transform_ch, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.gdn2(self.conv2(self.gdn1(self.conv1(x))))


class SynthesisStack(Module):
    """Features at quarter resolution back to the image branch."""

    def __init__(self, transform_ch: int, *, rng, dtype=np.float32):
        self.igdn1 = GDN(transform_ch, inverse=True, dtype=dtype)
        self.tconv1 = ConvTranspose2d(transform_ch, transform_ch, 3, stride=2, padding=1,
                                      output_padding=1, rng=rng, dtype=dtype)
        self.igdn2 = GDN(transform_ch, inverse=True, dtype=dtype)
        self.tconv2 = ConvTranspose2d(transform_ch, 3, 3, stride=2, padding=1, output_padding=1,
                                      rng=rng, zero_init=True, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.tconv2(self.igdn2(self.tconv1(self.igdn1(x))))


class HierarchicalLayer(Module):
    """One coupling step whose latent branch is the masked two-level chain."""

    def __init__(self, config: FlowConfig, *, transmitting: bool, rng, dtype=np.float32):
        L, N = config.transform_channels, config.latent_channels
        self.analysis = AnalysisStack(L, rng=rng, dtype=dtype)
        if transmitting:
            self.units = [
                LsUnitB(L, N, conditioned=True, rng=rng, dtype=dtype),
                LsUnitB(L, N, conditioned=False, rng=rng, dtype=dtype),
            ]
        else:
            self.units = [LsUnitA(L, N, rng=rng, dtype=dtype), LsUnitA(L, N, rng=rng, dtype=dtype)]
        self.synthesis = SynthesisStack(L, rng=rng, dtype=dtype)

    def analyze(self, x: Tensor, masks, prev: LatentHierarchy | None = None,
                quantize: bool = False) -> tuple[LatentHierarchy, Tensor]:
        return lsunit_chain_analyze(self.units, self.analysis(x), masks, quantize, prev)

    def emissions(self, x: Tensor, masks) -> list[Tensor]:
        return lsunit_chain_emissions(self.units, self.analysis(x), masks)

    def synthesize(self, latents: LatentHierarchy) -> Tensor:
        return self.synthesis(lsunit_chain_synthesize(self.units, latents))


class SingleScaleLayer(Module):
    """One coupling step with a plain single-scale latent branch."""

    def __init__(self, config: FlowConfig, *, rng, dtype=np.float32):
        L, N = config.transform_channels, config.latent_channels
        self.conv1 = Conv2d(3, L, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.gdn1 = GDN(L, dtype=dtype)
        self.conv2 = Conv2d(L, L, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.gdn2 = GDN(L, dtype=dtype)
        self.conv3 = Conv2d(L, L, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.gdn3 = GDN(L, dtype=dtype)
        self.head = Conv2d(L, N, 3, stride=1, padding=1, rng=rng, dtype=dtype)
        self.tail = Conv2d(N, L, 3, stride=1, padding=1, rng=rng, dtype=dtype)
        self.igdn1 = GDN(L, inverse=True, dtype=dtype)
        self.tconv1 = ConvTranspose2d(L, L, 3, stride=2, padding=1, output_padding=1, rng=rng, dtype=dtype)
        self.igdn2 = GDN(L, inverse=True, dtype=dtype)
        self.tconv2 = ConvTranspose2d(L, L, 3, stride=2, padding=1, output_padding=1, rng=rng, dtype=dtype)
        self.igdn3 = GDN(L, inverse=True, dtype=dtype)
        self.tconv3 = ConvTranspose2d(L, 3, 3, stride=2, padding=1, output_padding=1, rng=rng,
                                      zero_init=True, dtype=dtype)

    def analyze(self, x: Tensor) -> Tensor:
        f = self.gdn1(self.conv1(x))
        f = self.gdn2(self.conv2(f))
        f = self.gdn3(self.conv3(f))
        return self.head(f)

    def synthesize(self, z: Tensor) -> Tensor:
        f = self.tail(z)
        f = self.tconv1(self.igdn1(f))
        f = self.tconv2(self.igdn2(f))
        return self.tconv3(self.igdn3(f))


# ---------------------------------------------------------------------------
# transmission: quantization proxy, conditional density, rate
# ---------------------------------------------------------------------------


def _quantize(values: Tensor, mode: str, rng, mask: np.ndarray | None) -> Tensor:
    if mode == "none":
        return values
    if mode == "round":
        return F.round_ste(values).detach()
    if mode == "ste":
        return F.round_ste(values)
    if mode == "noise":
        if rng is None:
            raise ValueError("noise quantization needs an rng")
        noise = rng.uniform(-0.5, 0.5, size=values.shape).astype(values.dtype)
        noise_t = Tensor(noise)
        if mask is not None:
            noise_t = F.mul_mask(noise_t, mask)
        return F.add(values, noise_t)
    raise ValueError(f"unknown quantization mode {mode!r}; expected one of {QUANT_MODES}")


def _neg_log2(p: Tensor) -> Tensor:
    return F.mul_scalar(F.log(F.clamp_min(p, P_MIN)), -1.0 / _LOG2)


def gmm_likelihood_map(raw: Tensor, values: Tensor) -> Tensor:
    """Interval mass of each value under its local 3-component mixture.

    ``raw`` stacks, component-major, the means, raw scales and weight
    logits (9 blocks of the latent width); scales go through a softplus
    with a fixed floor and weights through a stable softmax.
    """
    n = values.shape[1]
    if raw.shape[1] != 9 * n:
        raise ValueError(f"mixture head emitted {raw.shape[1]} channels, expected {9 * n}")
    logits = [F.slice_channels(raw, 6 * n + k * n, 6 * n + (k + 1) * n) for k in range(3)]
    logit_max = Tensor(np.maximum(np.maximum(logits[0].data, logits[1].data), logits[2].data))
    exps = [F.exp(F.sub(lg, logit_max)) for lg in logits]
    denom_inv = F.pow_scalar(F.add(F.add(exps[0], exps[1]), exps[2]), -1.0)
    prob = None
    for k in range(3):
        mu = F.slice_channels(raw, k * n, (k + 1) * n)
        sd_raw = F.slice_channels(raw, 3 * n + k * n, 3 * n + (k + 1) * n)
        inv_sd = F.pow_scalar(F.add_scalar(F.softplus(sd_raw), SIGMA_MIN), -1.0)
        centered = F.sub(values, mu)
        upper = F.gaussian_cdf(F.mul(F.add_scalar(centered, 0.5), inv_sd))
        lower = F.gaussian_cdf(F.mul(F.add_scalar(centered, -0.5), inv_sd))
        weight = F.mul(exps[k], denom_inv)
        term = F.mul(weight, F.sub(upper, lower))
        prob = term if prob is None else F.add(prob, term)
    return prob


@dataclass
class LevelTransmission:
    transmitted: Tensor  # latent state as returned in the hierarchy
    rate_input: Tensor  # latent the density model was evaluated on
    hyper: Tensor  # (possibly noisy/rounded) side-information latent
    latent_bits: Tensor
    hyper_bits: Tensor


def transmit_level(unit: LsUnitB, state: Tensor, mask: np.ndarray, level: int, mode: str,
                   rng, conditioning: Tensor | None) -> LevelTransmission:
    """Price one hierarchy level and produce its transmitted latent."""
    y_masked = apply_mask(state, mask, level)
    if mode == "none":
        y_coded = y_masked
        transmitted = state
    else:
        y_coded = _quantize(y_masked, mode, rng, mask)
        transmitted = y_coded

    hyper = unit.hyper_analyze(y_masked, conditioning)
    hyper_coded = _quantize(hyper, mode if mode != "none" else "none", rng, None)
    hyper_bits = F.sum_all(_neg_log2(unit.hyper_density.likelihood(hyper_coded)))

    hyper_feat = unit.hyper_synthesize(hyper_coded, conditioning)
    ctx_feat = unit.context(y_coded)
    raw = unit.gmm_params_raw(hyper_feat, ctx_feat)
    prob = gmm_likelihood_map(raw, y_coded)
    latent_bits = F.sum_all(F.mul_mask(_neg_log2(prob), mask))
    return LevelTransmission(transmitted, y_coded, hyper_coded, latent_bits, hyper_bits)


# ---------------------------------------------------------------------------
# whole models
# ---------------------------------------------------------------------------


@dataclass
class EncodeResult:
    latents: LatentHierarchy
    hyper: list[Tensor]  # fine level first
    residual: Tensor
    rate_bits: Tensor  # scalar tensor (graph-carrying in training modes)
    breakdown: dict[str, float] = field(default_factory=dict)


class FlowCodecModel(Module):
    """Shared driver around the two coupling layers."""

    def __init__(self, config: FlowConfig):
        self.config = config

    # subclass hooks -----------------------------------------------------------

    def _first_layer(self, x: Tensor, masks) -> tuple[Tensor, LatentHierarchy]:
        raise NotImplementedError

    def _invert_first_layer(self, x1: Tensor, z_levels: list[Tensor], masks) -> Tensor:
        raise NotImplementedError

    # api -----------------------------------------------------------------------

    def encode(self, x: Tensor, masks, mode: str = "round", rng=None) -> EncodeResult:
        if mode not in QUANT_MODES:
            raise ValueError(f"unknown quantization mode {mode!r}; expected one of {QUANT_MODES}")
        if x.shape[1] != 3:
            raise ValueError(f"expected a 3-channel image tensor, got {x.shape}")
        if x.shape[2] % PAD_MULTIPLE or x.shape[3] % PAD_MULTIPLE:
            raise ValueError(
                f"extents {x.shape[2:]} must be multiples of {PAD_MULTIPLE}; pad the input first"
            )
        x1, prev = self._first_layer(x, masks)
        state, _deep = self.layer2.analyze(x1, masks, prev=prev)

        unit_fine, unit_coarse = self.layer2.units
        coarse = transmit_level(unit_coarse, state[1].latent, masks.level_mask(2), 2, mode, rng, None)
        conditioning = F.upsample_nearest2(coarse.rate_input)
        fine = transmit_level(unit_fine, state[0].latent, masks.level_mask(1), 1, mode, rng, conditioning)

        quantized = mode in ("round", "ste")
        latents = LatentHierarchy([
            LatentLevel(fine.transmitted, 1, quantized, mask_applied=mode != "none"),
            LatentLevel(coarse.transmitted, 2, quantized, mask_applied=mode != "none"),
        ])
        residual = F.sub(x1, self.layer2.synthesize(latents))
        rate = F.add(F.add(fine.latent_bits, fine.hyper_bits),
                     F.add(coarse.latent_bits, coarse.hyper_bits))
        breakdown = {
            "fine_latent_bits": fine.latent_bits.item(),
            "fine_hyper_bits": fine.hyper_bits.item(),
            "coarse_latent_bits": coarse.latent_bits.item(),
            "coarse_hyper_bits": coarse.hyper_bits.item(),
        }
        return EncodeResult(latents, [fine.hyper, coarse.hyper], residual, rate, breakdown)

    def decode(self, latents: LatentHierarchy, masks, residual: Tensor | None = None) -> Tensor:
        """Invert the flow; without a residual the image branch starts at zero.

        In transmission mode (no residual) the latents are re-masked first,
        so values at positions not assigned to a level can never leak into
        the reconstruction.
        """
        if len(latents) != 2:
            raise ValueError(f"expected a two-level hierarchy, got {len(latents)} levels")
        if residual is None:
            latents = latents.masked(masks)
            x1 = self.layer2.synthesize(latents)
        else:
            x1 = F.add(residual, self.layer2.synthesize(latents))
        emissions = self.layer2.emissions(x1, masks)
        z_levels = [F.sub(latents[i].latent, emissions[i]) for i in range(2)]
        return self._invert_first_layer(x1, z_levels, masks)


class MAnficModel(FlowCodecModel):
    """Masked hierarchy in both coupling layers."""

    def __init__(self, config: FlowConfig, *, rng, dtype=np.float32):
        super().__init__(config)
        self.layer1 = HierarchicalLayer(config, transmitting=False, rng=rng, dtype=dtype)
        self.layer2 = HierarchicalLayer(config, transmitting=True, rng=rng, dtype=dtype)

    def _first_layer(self, x, masks):
        h1, _ = self.layer1.analyze(x, masks, prev=None)
        x1 = F.sub(x, self.layer1.synthesize(h1))
        return x1, h1

    def _invert_first_layer(self, x1, z_levels, masks):
        hierarchy = LatentHierarchy([LatentLevel(z_levels[0], 1), LatentLevel(z_levels[1], 2)])
        return F.add(x1, self.layer1.synthesize(hierarchy))


class MsAnficModel(FlowCodecModel):
    """Single-scale first layer plus the invertible latent split."""

    def __init__(self, config: FlowConfig, *, rng, dtype=np.float32):
        super().__init__(config)
        self.layer1 = SingleScaleLayer(config, rng=rng, dtype=dtype)
        self.split = SplitParams(config.latent_channels, rng=rng, dtype=dtype)
        self.layer2 = HierarchicalLayer(config, transmitting=True, rng=rng, dtype=dtype)

    def _first_layer(self, x, masks):
        z1 = self.layer1.analyze(x)
        x1 = F.sub(x, self.layer1.synthesize(z1))
        z11, z12 = latent_split(z1, self.split)
        prev = LatentHierarchy([LatentLevel(z11, 1), LatentLevel(z12, 2)])
        return x1, prev

    def _invert_first_layer(self, x1, z_levels, masks):
        z1 = latent_merge(z_levels[0], z_levels[1], self.split)
        return F.add(x1, self.layer1.synthesize(z1))


def build_model(config: FlowConfig, seed: int = 0, dtype=np.float32) -> FlowCodecModel:
    rng = np.random.default_rng(seed)
    if config.model_kind is ModelKind.M_ANFIC:
        return MAnficModel(config, rng=rng, dtype=dtype)
    return MsAnficModel(config, rng=rng, dtype=dtype)


# ---------------------------------------------------------------------------
# spec-level layer ops and padding
# ---------------------------------------------------------------------------


def layer_encode(layer, x: Tensor, z, masks=None):
    """z' = z + analysis(x); x' = x - synthesis(z'); exact inverse exists."""
    if isinstance(layer, SingleScaleLayer):
        a = layer.analyze(x)
        z_new = a if z is None else F.add(z, a)
        return F.sub(x, layer.synthesize(z_new)), z_new
    z_new, _ = layer.analyze(x, masks, prev=z)
    return F.sub(x, layer.synthesize(z_new)), z_new


def layer_decode(layer, x_prime: Tensor, z_new, masks=None):
    """x = x' + synthesis(z'); z = z' - analysis(x)."""
    x = F.add(x_prime, layer.synthesize(z_new))
    if isinstance(layer, SingleScaleLayer):
        return x, F.sub(z_new, layer.analyze(x))
    emissions = layer.emissions(x, masks)
    z = LatentHierarchy([
        LatentLevel(F.sub(z_new[i].latent, emissions[i]), i + 1) for i in range(len(emissions))
    ])
    return x, z


def pad_to_multiple(image: np.ndarray, multiple: int = PAD_MULTIPLE) -> tuple[np.ndarray, tuple[int, int]]:
    """Replicate-pad (1, 3, h, w) to the next multiple; returns true extents."""
    _, _, h, w = image.shape
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    padded = np.pad(image, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge")
    return padded, (h, w)


def crop_to(data: np.ndarray, true_hw: tuple[int, int]) -> np.ndarray:
    h, w = true_hw
    return data[:, :, :h, :w]
