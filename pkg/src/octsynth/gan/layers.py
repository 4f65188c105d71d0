"""Building blocks for the wavelet-domain style networks.

All blocks run in whatever dtype their parameters carry, so the gradient
oracles can instantiate double-precision copies.  The Haar helpers here are
the differentiable torch twins of :mod:`octsynth.wavelet` and share its
coefficient convention; subbands travel channel-concatenated in the order
ll, lh, hl, hh.
"""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn
from torch.nn import functional as F

from ..errors import ShapeError


def pixel_norm(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Scale each vector to the unit hypersphere radius (StyleGAN input norm)."""
    return x * torch.rsqrt(x.square().mean(dim=-1, keepdim=True) + eps)


def lrelu(x: Tensor) -> Tensor:
    # sqrt(2) gain keeps activation variance roughly unit through the stack.
    return F.leaky_relu(x, 0.2) * math.sqrt(2.0)


def modulated_conv2d(
    features: Tensor,
    weight: Tensor,
    styles: Tensor,
    demodulate: bool = True,
    eps: float = 1e-8,
) -> Tensor:
    """Per-sample style-modulated convolution.

    ``weight`` is (out, in, k, k); ``styles`` is (batch, in) and scales the
    input channels of the kernel.  With ``demodulate`` each per-sample output
    filter is renormalized by 1/sqrt(sum(w'^2) + eps), which makes the output
    invariant to a uniform positive rescaling of ``styles``.
    """
    if features.ndim != 4:
        raise ShapeError(f"features must be (B,C,H,W), got {tuple(features.shape)}")
    b, in_ch, h, w = features.shape
    out_ch, w_in, kh, kw = weight.shape
    if w_in != in_ch:
        raise ShapeError(f"kernel expects {w_in} input channels, features have {in_ch}")
    if styles.shape != (b, in_ch):
        raise ShapeError(f"styles must be ({b},{in_ch}), got {tuple(styles.shape)}")
    wmod = weight.unsqueeze(0) * styles[:, None, :, None, None]
    if demodulate:
        denom = torch.rsqrt(wmod.square().sum(dim=[2, 3, 4]) + eps)
        wmod = wmod * denom[:, :, None, None, None]
    x = features.reshape(1, b * in_ch, h, w)
    wmod = wmod.reshape(b * out_ch, in_ch, kh, kw)
    out = F.conv2d(x, wmod, padding=kh // 2, groups=b)
    return out.reshape(b, out_ch, h, w)


class EqualizedLinear(nn.Module):
    """Linear layer with He-style runtime weight scaling."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        bias: bool = True,
        bias_init: float = 0.0,
        lr_mul: float = 1.0,
    ) -> None:
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_features, in_features) / lr_mul)
        self.bias = nn.Parameter(torch.full((out_features,), float(bias_init))) if bias else None
        self.scale = lr_mul / math.sqrt(in_features)
        self.lr_mul = lr_mul

    def effective_weight(self) -> Tensor:
        """The matrix actually applied to inputs (used by the factorizer)."""
        return self.weight * self.scale

    def forward(self, x: Tensor) -> Tensor:
        bias = self.bias * self.lr_mul if self.bias is not None else None
        return F.linear(x, self.weight * self.scale, bias)


class EqualizedConv2d(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, bias: bool = True) -> None:
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch)) if bias else None
        self.scale = 1.0 / math.sqrt(in_ch * kernel * kernel)
        self.padding = kernel // 2

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight * self.scale, self.bias, padding=self.padding)


class ModulatedConv2d(nn.Module):
    """Style-affine plus modulated convolution for one generator slot."""

    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        kernel: int,
        style_dim: int,
        demodulate: bool = True,
    ) -> None:
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.affine = EqualizedLinear(style_dim, in_ch, bias_init=1.0)
        self.scale = 1.0 / math.sqrt(in_ch * kernel * kernel)
        self.demodulate = demodulate

    def forward(self, x: Tensor, w: Tensor) -> Tensor:
        styles = self.affine(w)
        return modulated_conv2d(x, self.weight * self.scale, styles, self.demodulate)


class NoiseInjection(nn.Module):
    def __init__(self) -> None:
        super().__init__()
        self.strength = nn.Parameter(torch.zeros(()))

    def forward(self, x: Tensor, noise: Tensor) -> Tensor:
        return x + self.strength * noise


def dwt2_t(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, 4C, H/2, W/2), bands ordered ll, lh, hl, hh."""
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ShapeError(f"spatial dims must be even, got {tuple(x.shape[-2:])}")
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) * 0.5
    lh = (a + b - c - d) * 0.5
    hl = (a - b + c - d) * 0.5
    hh = (a - b - c + d) * 0.5
    return torch.cat([ll, lh, hl, hh], dim=1)


def iwt2_t(coeffs: Tensor) -> Tensor:
    """(B, 4C, h, w) -> (B, C, 2h, 2w), exact inverse of :func:`dwt2_t`."""
    if coeffs.shape[1] % 4:
        raise ShapeError(f"channel count must be divisible by 4, got {coeffs.shape[1]}")
    ll, lh, hl, hh = coeffs.chunk(4, dim=1)
    a = (ll + lh + hl + hh) * 0.5
    b = (ll + lh - hl - hh) * 0.5
    c = (ll - lh + hl - hh) * 0.5
    d = (ll - lh - hl + hh) * 0.5
    top = torch.stack((a, b), dim=-1).flatten(-2)
    bottom = torch.stack((c, d), dim=-1).flatten(-2)
    return torch.stack((top, bottom), dim=-2).flatten(-3, -2)


def wavelet_upsample_t(coeffs: Tensor) -> Tensor:
    """Coefficient-space 2x lift: iwt2 -> bilinear 2x -> dwt2."""
    img = iwt2_t(coeffs)
    up = F.interpolate(img, scale_factor=2, mode="bilinear", align_corners=False)
    return dwt2_t(up)


def minibatch_stddev(x: Tensor, group_size: int = 4, eps: float = 1e-8) -> Tensor:
    """Append one channel carrying cross-sample feature spread."""
    b, _, h, w = x.shape
    g = min(group_size, b)
    while b % g:
        g -= 1
    y = x.reshape(g, b // g, *x.shape[1:])
    var = y.var(dim=0, unbiased=False)
    sd = (var + eps).sqrt().mean(dim=[1, 2, 3])  # one scalar per group
    sd = sd.repeat(g).reshape(b, 1, 1, 1).expand(b, 1, h, w)
    return torch.cat([x, sd], dim=1)
