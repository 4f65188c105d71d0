"""Style-based wavelet generator/discriminator pair."""

from .discriminator import DiscriminatorConfig, WaveletDiscriminator
from .generator import (
    GeneratorConfig,
    MappingNetwork,
    WaveletGenerator,
    compute_w_mean,
    truncate_w,
)
from .layers import (
    dwt2_t,
    iwt2_t,
    minibatch_stddev,
    modulated_conv2d,
    pixel_norm,
    wavelet_upsample_t,
)

__all__ = [
    "DiscriminatorConfig",
    "GeneratorConfig",
    "MappingNetwork",
    "WaveletDiscriminator",
    "WaveletGenerator",
    "compute_w_mean",
    "truncate_w",
    "dwt2_t",
    "iwt2_t",
    "minibatch_stddev",
    "modulated_conv2d",
    "pixel_norm",
    "wavelet_upsample_t",
]
