"""Model configuration and the lambda operating points."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

# distortion weights in header-index order (index 0 = highest quality)
LAMBDA_GRID = (0.1, 0.05, 0.02, 0.01, 0.005, 0.002)

NUM_FLOW_LAYERS = 2

# image pixels per latent cell at each hierarchy level
FINE_DOWNSAMPLE = 8
COARSE_DOWNSAMPLE = 16

# input extents are replicate-padded to this multiple (one mask block)
PAD_MULTIPLE = 64


class ModelKind(Enum):
    M_ANFIC = "m-anfic"
    MS_ANFIC = "ms-anfic"

    @property
    def wire_id(self) -> int:
        return {ModelKind.M_ANFIC: 0, ModelKind.MS_ANFIC: 1}[self]

    @staticmethod
    def from_wire(value: int) -> "ModelKind":
        try:
            return {0: ModelKind.M_ANFIC, 1: ModelKind.MS_ANFIC}[value]
        except KeyError:
            raise ValueError(f"unknown model kind id {value}") from None


@dataclass(frozen=True)
class FlowConfig:
    model_kind: ModelKind
    transform_channels: int = 192  # width of the analysis/synthesis stacks
    latent_channels: int = 192  # width of every hierarchy level
    num_layers: int = NUM_FLOW_LAYERS

    def __post_init__(self):
        if self.num_layers != NUM_FLOW_LAYERS:
            raise ValueError(f"the flow is fixed at {NUM_FLOW_LAYERS} layers")
        if self.transform_channels < 1 or self.latent_channels < 1:
            raise ValueError("channel counts must be positive")


def lambda_index(lambda2: float) -> int:
    for i, lam in enumerate(LAMBDA_GRID):
        if abs(lam - lambda2) < 1e-12:
            return i
    raise ValueError(f"lambda2 {lambda2} is not one of {LAMBDA_GRID}")
