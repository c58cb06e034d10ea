"""Hierarchy-assignment masks.

A mask pyramid decides, block by block, whether an image region is
transmitted at the fine latent level (1) or the coarse one (2). Blocks are
BLOCK px square in image space, which maps to whole groups of latent
positions at both levels, so level masks are block-constant and the two
levels always partition the image exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# image pixels per assignment block; one block = (BLOCK/8)^2 fine latent
# cells and (BLOCK/16)^2 coarse cells
BLOCK = 64
LEVEL_DOWNSAMPLE = {1: 8, 2: 16}

# median per-block luminance variance of the bundled synthetic corpus
# (~50% of blocks land fine at this value)
DEFAULT_VARIANCE_THRESHOLD = 1.012e-2

_REC601 = np.array([0.299, 0.587, 0.114])


class MaskError(ValueError):
    pass


@dataclass
class MaskPyramid:
    """Per-block level assignment plus the derived per-level binary grids."""

    block_grid: np.ndarray  # (hb, wb) of {1, 2}

    def __post_init__(self):
        grid = np.asarray(self.block_grid)
        if grid.ndim != 2 or grid.size == 0:
            raise MaskError(f"block grid must be non-empty 2-D, got shape {grid.shape}")
        if not np.isin(grid, (1, 2)).all():
            raise MaskError("block grid entries must be 1 (fine) or 2 (coarse)")
        self.block_grid = grid.astype(np.uint8)

    @property
    def block_extents(self) -> tuple[int, int]:
        return self.block_grid.shape

    def level_mask(self, level: int) -> np.ndarray:
        """Binary (1, 1, h, w) grid at the level's latent resolution."""
        if level not in LEVEL_DOWNSAMPLE:
            raise MaskError(f"unknown hierarchy level {level}")
        cells = BLOCK // LEVEL_DOWNSAMPLE[level]
        grid = (self.block_grid == level).astype(np.float32)
        full = grid.repeat(cells, axis=0).repeat(cells, axis=1)
        return full[None, None]

    def is_partition(self) -> bool:
        """Exactly one level claims every position once upsampled to a common grid."""
        m1 = self.level_mask(1)[0, 0]
        m2 = self.level_mask(2)[0, 0].repeat(2, axis=0).repeat(2, axis=1)
        return bool(np.array_equal(m1 + m2, np.ones_like(m1)))

    def with_all(self, level: int) -> "MaskPyramid":
        return MaskPyramid(np.full(self.block_grid.shape, level, np.uint8))

    def flipped(self, i: int, j: int) -> "MaskPyramid":
        grid = self.block_grid.copy()
        grid[i, j] = 3 - grid[i, j]
        return MaskPyramid(grid)


class BatchMasks:
    """Per-sample pyramids stacked along the batch axis for training."""

    def __init__(self, pyramids: list[MaskPyramid]):
        if not pyramids:
            raise MaskError("empty batch of masks")
        self.pyramids = list(pyramids)

    def level_mask(self, level: int) -> np.ndarray:
        return np.concatenate([p.level_mask(level) for p in self.pyramids], axis=0)


def blocks_for_image(height: int, width: int) -> tuple[int, int]:
    if height % BLOCK or width % BLOCK:
        raise MaskError(f"extents {height}x{width} are not multiples of the {BLOCK}px block")
    return height // BLOCK, width // BLOCK


def random_mask(grid_extents: tuple[int, int], level_probabilities=(0.5, 0.5), seed: int = 0) -> MaskPyramid:
    """i.i.d. per-block assignment; deterministic for a given seed."""
    probs = np.asarray(level_probabilities, dtype=np.float64)
    if probs.shape != (2,) or (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-9:
        raise MaskError(f"level probabilities must be two non-negatives summing to 1, got {level_probabilities}")
    rng = np.random.default_rng(seed)
    grid = rng.choice([1, 2], size=grid_extents, p=probs)
    return MaskPyramid(grid)


def block_luminance_variances(image: np.ndarray, block_size: int = BLOCK) -> np.ndarray:
    """Per-block variance of Rec.601 luminance; image is (1, 3, h, w) in [0, 1]."""
    img = np.asarray(image)
    if img.ndim != 4 or img.shape[0] != 1 or img.shape[1] != 3:
        raise MaskError(f"expected a (1, 3, h, w) image, got {img.shape}")
    _, _, h, w = img.shape
    if h % block_size or w % block_size:
        raise MaskError(f"extents {h}x{w} are not multiples of block size {block_size}")
    luma = np.tensordot(_REC601, img[0], axes=([0], [0]))
    hb, wb = h // block_size, w // block_size
    blocks = luma.reshape(hb, block_size, wb, block_size).transpose(0, 2, 1, 3)
    return blocks.reshape(hb, wb, -1).var(axis=2)


def variance_mask(image: np.ndarray, block_size: int = BLOCK,
                  threshold: float = DEFAULT_VARIANCE_THRESHOLD) -> MaskPyramid:
    """Structured blocks (variance >= threshold) go fine, the rest coarse."""
    if threshold < 0:
        raise MaskError(f"threshold must be non-negative, got {threshold}")
    variances = block_luminance_variances(image, block_size)
    grid = np.where(variances >= threshold, 1, 2)
    return MaskPyramid(grid)


def calibrate_variance_threshold(images) -> float:
    """Median per-block variance over a corpus: ~50% of blocks land fine."""
    all_vars = np.concatenate([block_luminance_variances(img).reshape(-1) for img in images])
    return float(np.median(all_vars))


def rdo_mask_search(image: np.ndarray, cost_fn, initial: MaskPyramid) -> MaskPyramid:
    """Greedy per-block descent on a Lagrangian cost.

    ``cost_fn(mask) -> float`` must evaluate rate + lambda * distortion for
    the image. The variance mask and the two single-level masks are scored
    as seeds alongside ``initial`` (ties keep ``initial``), then blocks are
    flipped in raster order while the cost decreases; an equal-cost flip is
    taken only toward the coarse level, so the search cannot cycle.
    """
    seeds = [initial, variance_mask(image), initial.with_all(1), initial.with_all(2)]
    costs = [cost_fn(m) for m in seeds]
    best_idx = int(np.argmin(costs))
    if costs[0] <= costs[best_idx]:
        best_idx = 0
    current, current_cost = seeds[best_idx], costs[best_idx]

    hb, wb = current.block_extents
    improved = True
    while improved:
        improved = False
        for i in range(hb):
            for j in range(wb):
                candidate = current.flipped(i, j)
                cost = cost_fn(candidate)
                toward_coarse = candidate.block_grid[i, j] == 2
                if cost < current_cost or (cost == current_cost and toward_coarse and
                                           current.block_grid[i, j] == 1):
                    current, current_cost = candidate, cost
                    improved = True
    return current


# ---------------------------------------------------------------------------
# wire format: 1 bit per block, raster order, bit 1 = level 1, MSB first,
# zero-padded to a byte boundary
# ---------------------------------------------------------------------------


def mask_serialize(pyramid: MaskPyramid) -> bytes:
    bits = (pyramid.block_grid.reshape(-1) == 1).astype(np.uint8)
    return np.packbits(bits).tobytes()


def mask_deserialize(blob: bytes, grid_extents: tuple[int, int]) -> MaskPyramid:
    hb, wb = grid_extents
    n = hb * wb
    if len(blob) != (n + 7) // 8:
        raise MaskError(f"mask section holds {len(blob)} bytes, expected {(n + 7) // 8} for {n} blocks")
    bits = np.unpackbits(np.frombuffer(blob, np.uint8))[:n]
    grid = np.where(bits == 1, 1, 2).reshape(hb, wb)
    return MaskPyramid(grid)
