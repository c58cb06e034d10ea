"""The two-level latent hierarchy and mask application."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..nn import functional as F
from ..nn.tensor import Tensor


def apply_mask(latent: Tensor, mask: np.ndarray, level: int) -> Tensor:
    """Zero out positions not assigned to this level (idempotent)."""
    if mask.shape[2:] != latent.shape[2:]:
        raise ValueError(
            f"level-{level} mask extents {mask.shape[2:]} do not match latent {latent.shape[2:]}"
        )
    return F.mul_mask(latent, mask)


@dataclass
class LatentLevel:
    latent: Tensor
    level: int
    quantized: bool = False
    mask_applied: bool = False


@dataclass
class LatentHierarchy:
    """Fine level first; the coarse level sits at half the fine extents."""

    levels: list[LatentLevel] = field(default_factory=list)

    def __post_init__(self):
        if len(self.levels) == 2:
            fine, coarse = self.levels[0].latent, self.levels[1].latent
            if (fine.shape[2] != 2 * coarse.shape[2]) or (fine.shape[3] != 2 * coarse.shape[3]):
                raise ValueError(
                    f"coarse level {coarse.shape[2:]} must be half the fine level {fine.shape[2:]}"
                )

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, i: int) -> LatentLevel:
        return self.levels[i]

    def tensors(self) -> list[Tensor]:
        return [entry.latent for entry in self.levels]

    def masked(self, masks) -> "LatentHierarchy":
        out = []
        for entry in self.levels:
            m = masks.level_mask(entry.level)
            out.append(
                LatentLevel(apply_mask(entry.latent, m, entry.level), entry.level,
                            entry.quantized, True)
            )
        return LatentHierarchy(out)
