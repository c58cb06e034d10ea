from . import checkpoint, functional, optim
from .layers import GDN, Conv2d, ConvTranspose2d, MaskedConv2d, Module
from .optim import Adam, adam_step
from .tensor import Parameter, Tensor, no_grad

__all__ = [
    "Adam",
    "Conv2d",
    "ConvTranspose2d",
    "GDN",
    "MaskedConv2d",
    "Module",
    "Parameter",
    "Tensor",
    "adam_step",
    "checkpoint",
    "functional",
    "no_grad",
    "optim",
]
