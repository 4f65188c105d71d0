"""Orthonormal 2-D Haar analysis/synthesis and the coefficient-space 2x upsampler.

This is the frequency domain the generator and discriminator operate in.
Convention: for each 2x2 pixel block [a b; c d]

    ll = (a+b+c+d)/2    lh = (a+b-c-d)/2
    hl = (a-b+c-d)/2    hh = (a-b-c+d)/2

which is orthonormal, so coefficient energy equals pixel energy and the
inverse is exact.  Multi-channel inputs transform channel-independently:
any leading axes are treated as batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import ShapeError


@dataclass
class SubbandStack:
    """One level of Haar coefficients: four equally shaped matrices."""

    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray

    def __post_init__(self) -> None:
        shapes = {np.shape(b) for b in self.bands()}
        if len(shapes) != 1:
            raise ShapeError(f"subband shapes differ: {sorted(shapes)}")
        for b in self.bands():
            if not np.all(np.isfinite(b)):
                raise ShapeError("subbands must be finite")

    def bands(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (self.ll, self.lh, self.hl, self.hh)

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.ll.shape[-2], self.ll.shape[-1]

    def energy(self) -> float:
        return float(sum(np.sum(np.square(b, dtype=np.float64)) for b in self.bands()))


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
    x = np.ascontiguousarray(x)
    lead = x.shape[:-2]
    return x.reshape((-1, x.shape[-2], x.shape[-1])), lead


def dwt2(image: np.ndarray) -> SubbandStack:
    """Single-level Haar analysis of an (..., H, W) array with H, W even."""
    image = np.asarray(image)
    if image.ndim < 2:
        raise ShapeError(f"expected at least 2-D input, got shape {image.shape}")
    h, w = image.shape[-2], image.shape[-1]
    if h % 2 or w % 2:
        raise ShapeError(f"spatial dims must be even, got {h}x{w}")
    flat, lead = _as_batch(image.astype(np.float64, copy=False))
    coeffs = _accel.haar_forward_blocks(flat)
    out_shape = lead + (h // 2, w // 2)
    return SubbandStack(*(coeffs[k].reshape(out_shape) for k in range(4)))


def iwt2(subbands: SubbandStack) -> np.ndarray:
    """Exact inverse of :func:`dwt2`."""
    stack = np.stack([np.asarray(b, dtype=np.float64) for b in subbands.bands()])
    h2, w2 = stack.shape[-2], stack.shape[-1]
    lead = stack.shape[1:-2]
    flat = np.ascontiguousarray(stack.reshape((4, -1, h2, w2)))
    image = _accel.haar_inverse_blocks(flat)
    return image.reshape(lead + (h2 * 2, w2 * 2))


def wavelet_upsample(subbands: SubbandStack) -> SubbandStack:
    """Lift one coefficient level to 2x spatial size.

    Defined as iwt2 -> bilinear 2x -> dwt2, so it is linear, maps zero to
    zero and keeps a constant-LL-only stack constant-LL-only.
    """
    from .resample import upsample_classical  # local import to avoid a cycle

    image = iwt2(subbands)
    return dwt2(upsample_classical(image, kind="bilinear"))
