"""Wavelet-domain discriminator.

Downsampling happens in coefficient space: each down block analyses the
feature stack with one Haar level, concatenates the four subbands along
channels and mixes them back with a 1x1 convolution.  The head uses a
minibatch-stddev channel before the final dense layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from ..errors import ParameterError, ShapeError
from .layers import EqualizedConv2d, EqualizedLinear, dwt2_t, lrelu, minibatch_stddev


@dataclass
class DiscriminatorConfig:
    resolution: int = 64
    base_resolution: int = 4
    img_channels: int = 1
    channel_max: int = 128
    channel_min: int = 32
    mbstd_group: int = 4

    def __post_init__(self) -> None:
        r = self.resolution
        if r < 8 or r & (r - 1):
            raise ParameterError(f"resolution must be a power of 2 >= 8, got {r}")

    @property
    def num_levels(self) -> int:
        return int(math.log2(self.resolution // self.base_resolution)) + 1

    def channel_schedule(self) -> tuple[int, ...]:
        # index 0 is the base (coarsest) level, mirroring the generator.
        return tuple(
            max(self.channel_min, self.channel_max >> level) for level in range(self.num_levels)
        )


class WaveletDiscriminator(nn.Module):
    def __init__(self, config: DiscriminatorConfig) -> None:
        super().__init__()
        self.config = config
        chans = config.channel_schedule()  # coarse -> fine
        self.from_img = EqualizedConv2d(config.img_channels, chans[-1], 1)
        self.blocks = nn.ModuleList()
        for level in range(config.num_levels - 1, 0, -1):
            in_ch, out_ch = chans[level], chans[level - 1]
            self.blocks.append(
                nn.ModuleList(
                    [
                        EqualizedConv2d(in_ch, in_ch, 3),
                        EqualizedConv2d(4 * in_ch, out_ch, 1),
                    ]
                )
            )
        base = config.base_resolution
        self.final_conv = EqualizedConv2d(chans[0] + 1, chans[0], 3)
        self.dense = EqualizedLinear(chans[0] * base * base, chans[0])
        self.out = EqualizedLinear(chans[0], 1)

    def forward(self, image: Tensor) -> Tensor:
        r = self.config.resolution
        if image.ndim != 4 or image.shape[1] != self.config.img_channels or image.shape[2:] != (r, r):
            raise ShapeError(
                f"expected (B, {self.config.img_channels}, {r}, {r}), got {tuple(image.shape)}"
            )
        x = lrelu(self.from_img(image))
        for conv, mix in self.blocks:
            x = lrelu(conv(x))
            x = lrelu(mix(dwt2_t(x)))
        x = minibatch_stddev(x, self.config.mbstd_group)
        x = lrelu(self.final_conv(x))
        x = lrelu(self.dense(x.flatten(1)))
        return self.out(x).squeeze(1)
