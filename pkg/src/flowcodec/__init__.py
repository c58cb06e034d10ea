"""flowcodec: an invertible multiscale learned image codec.

The package couples an image branch with a maskable two-level latent
hierarchy through additive flow steps, entropy-codes the quantized latents
with a conditional Gaussian-mixture model over a byte-exact range coder,
and ships the training and evaluation tooling around it.
"""

__version__ = "0.1.0"
