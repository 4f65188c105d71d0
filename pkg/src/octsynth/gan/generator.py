"""Style-mapped wavelet generator.

The synthesis path follows the skip architecture: every level runs styled
convolutions on a feature stack, emits one set of Haar subbands through a
1x1 modulated projection, and accumulates them with the coefficient-space
2x lift of the previous level.  The output image is the exact inverse
transform of the last accumulated level, so its analysis transform matches
the accumulated coefficients by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from ..errors import ParameterError, ShapeError
from .layers import (
    EqualizedLinear,
    ModulatedConv2d,
    NoiseInjection,
    iwt2_t,
    lrelu,
    pixel_norm,
    wavelet_upsample_t,
)


@dataclass
class GeneratorConfig:
    latent_dim: int = 128
    base_resolution: int = 4
    resolution: int = 64
    mapping_depth: int = 4
    img_channels: int = 1
    channel_max: int = 128
    channel_min: int = 32
    channels: tuple[int, ...] | None = None  # overrides the halving schedule

    def __post_init__(self) -> None:
        r = self.resolution
        if r < 8 or r & (r - 1):
            raise ParameterError(f"resolution must be a power of 2 >= 8, got {r}")
        b = self.base_resolution
        if b < 2 or b & (b - 1) or b >= r:
            raise ParameterError(f"base resolution must be a power of 2 < resolution, got {b}")
        if self.latent_dim < 1 or self.mapping_depth < 1:
            raise ParameterError("latent_dim and mapping_depth must be >= 1")
        if self.channels is not None and len(self.channels) != self.num_levels:
            raise ParameterError(
                f"channel schedule needs {self.num_levels} entries, got {len(self.channels)}"
            )
        if self.channels is not None and any(c < 1 for c in self.channels):
            raise ParameterError("channel counts must be >= 1")

    @property
    def num_levels(self) -> int:
        return int(math.log2(self.resolution // self.base_resolution)) + 1

    def channel_schedule(self) -> tuple[int, ...]:
        if self.channels is not None:
            return tuple(self.channels)
        return tuple(
            max(self.channel_min, self.channel_max >> level) for level in range(self.num_levels)
        )

    @property
    def num_ws(self) -> int:
        # base level: one conv + one wavelet projection; others add two convs.
        return 2 + 3 * (self.num_levels - 1)


class MappingNetwork(nn.Module):
    def __init__(self, latent_dim: int, depth: int, lr_mul: float = 0.01) -> None:
        super().__init__()
        self.layers = nn.ModuleList(
            EqualizedLinear(latent_dim, latent_dim, lr_mul=lr_mul) for _ in range(depth)
        )

    def forward(self, z: Tensor) -> Tensor:
        x = pixel_norm(z)
        for layer in self.layers:
            x = lrelu(layer(x))
        return x


class StyleLayer(nn.Module):
    """Modulated 3x3 conv with per-pixel noise, bias and activation."""

    def __init__(self, in_ch: int, out_ch: int, style_dim: int) -> None:
        super().__init__()
        self.conv = ModulatedConv2d(in_ch, out_ch, 3, style_dim, demodulate=True)
        self.noise = NoiseInjection()
        self.bias = nn.Parameter(torch.zeros(out_ch))

    def forward(self, x: Tensor, w: Tensor, noise: Tensor) -> Tensor:
        x = self.conv(x, w)
        x = self.noise(x, noise)
        return lrelu(x + self.bias.view(1, -1, 1, 1))


class ToWavelet(nn.Module):
    """1x1 modulated projection from features to four Haar subbands."""

    def __init__(self, in_ch: int, img_channels: int, style_dim: int) -> None:
        super().__init__()
        self.conv = ModulatedConv2d(in_ch, 4 * img_channels, 1, style_dim, demodulate=False)
        self.bias = nn.Parameter(torch.zeros(4 * img_channels))

    def forward(self, x: Tensor, w: Tensor) -> Tensor:
        return self.conv(x, w) + self.bias.view(1, -1, 1, 1)


class WaveletGenerator(nn.Module):
    def __init__(self, config: GeneratorConfig) -> None:
        super().__init__()
        self.config = config
        chans = config.channel_schedule()
        self.mapping = MappingNetwork(config.latent_dim, config.mapping_depth)
        self.const = nn.Parameter(
            torch.randn(chans[0], config.base_resolution, config.base_resolution)
        )
        self.base_layer = StyleLayer(chans[0], chans[0], config.latent_dim)
        self.base_to_wavelet = ToWavelet(chans[0], config.img_channels, config.latent_dim)
        self.up_layers = nn.ModuleList()
        self.to_wavelets = nn.ModuleList()
        for level in range(1, config.num_levels):
            in_ch, out_ch = chans[level - 1], chans[level]
            self.up_layers.append(
                nn.ModuleList(
                    [
                        StyleLayer(in_ch, out_ch, config.latent_dim),
                        StyleLayer(out_ch, out_ch, config.latent_dim),
                    ]
                )
            )
            self.to_wavelets.append(ToWavelet(out_ch, config.img_channels, config.latent_dim))

    @property
    def num_ws(self) -> int:
        return self.config.num_ws

    def style_affines(self) -> list[EqualizedLinear]:
        """Per-slot style-affine layers, in the same order w slots are consumed."""
        affines = [self.base_layer.conv.affine, self.base_to_wavelet.conv.affine]
        for level, to_w in zip(self.up_layers, self.to_wavelets):
            affines.extend([level[0].conv.affine, level[1].conv.affine, to_w.conv.affine])
        return affines

    def map_latent(self, z: Tensor) -> Tensor:
        """z (B, D) -> broadcast per-slot styles (B, num_ws, D)."""
        if z.ndim != 2 or z.shape[1] != self.config.latent_dim:
            raise ShapeError(
                f"latent must be (B, {self.config.latent_dim}), got {tuple(z.shape)}"
            )
        w = self.mapping(z)
        return w.unsqueeze(1).expand(-1, self.num_ws, -1).contiguous()

    def _noise(self, shape: tuple[int, ...], seed_gen: torch.Generator, like: Tensor) -> Tensor:
        noise = torch.randn(1, 1, *shape, generator=seed_gen, dtype=like.dtype, device=like.device)
        return noise

    def synthesize(self, w: Tensor, noise_seed: int = 0) -> tuple[Tensor, list[Tensor]]:
        """Render (B, C, R, R) plus the accumulated subband stack per level.

        Noise is a pure function of ``noise_seed``, shared across the batch,
        so repeated calls with equal (w, noise_seed) are bit-identical.
        """
        if w.ndim != 3 or w.shape[1] != self.num_ws or w.shape[2] != self.config.latent_dim:
            raise ShapeError(
                f"w must be (B, {self.num_ws}, {self.config.latent_dim}), got {tuple(w.shape)}"
            )
        gen = torch.Generator().manual_seed(int(noise_seed) & 0x7FFFFFFFFFFFFFFF)
        b = w.shape[0]
        x = self.const.unsqueeze(0).expand(b, -1, -1, -1).to(w.dtype)
        res = self.config.base_resolution
        x = self.base_layer(x, w[:, 0], self._noise((res, res), gen, w))
        coeffs = self.base_to_wavelet(x, w[:, 1])
        pyramid = [coeffs]
        slot = 2
        for level, to_w in zip(self.up_layers, self.to_wavelets):
            res *= 2
            x = nn.functional.interpolate(
                x, scale_factor=2, mode="bilinear", align_corners=False
            )
            x = level[0](x, w[:, slot], self._noise((res, res), gen, w))
            x = level[1](x, w[:, slot + 1], self._noise((res, res), gen, w))
            coeffs = wavelet_upsample_t(coeffs) + to_w(x, w[:, slot + 2])
            pyramid.append(coeffs)
            slot += 3
        image = iwt2_t(coeffs)
        return image, pyramid

    def forward(self, z: Tensor, noise_seed: int = 0) -> Tensor:
        image, _ = self.synthesize(self.map_latent(z), noise_seed=noise_seed)
        return image


def truncate_w(w: Tensor, psi: float, w_mean: Tensor) -> Tensor:
    """Pull styles toward the mean latent: w_mean + psi * (w - w_mean)."""
    if not 0.0 <= psi <= 1.0:
        raise ParameterError(f"psi must lie in [0, 1], got {psi}")
    return w_mean + psi * (w - w_mean)


def compute_w_mean(generator: WaveletGenerator, n: int = 1024, seed: int = 0) -> Tensor:
    """Mean mapped latent over ``n`` standard-normal draws (n >= 1000)."""
    if n < 1000:
        raise ParameterError(f"w_mean needs at least 1000 samples, got {n}")
    gen = torch.Generator().manual_seed(seed)
    dtype = next(generator.parameters()).dtype
    with torch.no_grad():
        total = torch.zeros(generator.num_ws, generator.config.latent_dim, dtype=dtype)
        for start in range(0, n, 256):
            count = min(256, n - start)
            z = torch.randn(count, generator.config.latent_dim, generator=gen, dtype=dtype)
            total += generator.map_latent(z).sum(dim=0)
    return total / n
