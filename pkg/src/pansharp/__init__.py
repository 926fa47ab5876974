"""Unsupervised GAN pan-sharpening at desk scale.

Library + CLI: a two-stream fusion generator with a conditional
discriminator, the hybrid cycle/adversarial/reconstruction/non-reference
loss, Wald-protocol data handling, classical baselines, and the full
reference / non-reference quality-metric suite.
"""

from .autodiff import Parameter, Tensor, no_grad, tensor

__all__ = ["Parameter", "Tensor", "no_grad", "tensor"]
__version__ = "0.1.0"
