from .backbone import (
    EncodeResult,
    FlowCodecModel,
    MAnficModel,
    MsAnficModel,
    build_model,
    crop_to,
    layer_decode,
    layer_encode,
    pad_to_multiple,
)
from .config import LAMBDA_GRID, FlowConfig, ModelKind, lambda_index
from .hierarchy import LatentHierarchy, LatentLevel, apply_mask
from .split import SplitParams, latent_merge, latent_split

__all__ = [
    "EncodeResult",
    "FlowCodecModel",
    "FlowConfig",
    "LAMBDA_GRID",
    "LatentHierarchy",
    "LatentLevel",
    "MAnficModel",
    "ModelKind",
    "MsAnficModel",
    "SplitParams",
    "apply_mask",
    "build_model",
    "crop_to",
    "lambda_index",
    "latent_merge",
    "latent_split",
    "layer_decode",
    "layer_encode",
    "pad_to_multiple",
]
