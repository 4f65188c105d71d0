"""Classical separable resampling: nearest, bilinear, bicubic, Lanczos.

Conventions, shared by every kind: half-pixel centers (output pixel i maps
to input coordinate (i + 0.5) * in/out - 0.5), replicate edge handling, and
per-pixel weight normalization so constant images are preserved exactly.
Bicubic is Catmull-Rom (a = -0.5); Lanczos uses a 3-lobe window.  When
downsampling with ``antialias`` the kernel support is stretched by the scale
factor, which is what library resizers do to avoid aliasing.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import _accel
from .errors import ParameterError, ShapeError

KINDS = ("nearest", "bilinear", "bicubic", "lanczos")


def _triangle(t: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, 1.0 - t)


def _catmull_rom(t: np.ndarray) -> np.ndarray:
    a = -0.5
    inner = (a + 2.0) * t**3 - (a + 3.0) * t**2 + 1.0
    outer = a * t**3 - 5.0 * a * t**2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, inner, np.where(t < 2.0, outer, 0.0))


def _lanczos3(t: np.ndarray) -> np.ndarray:
    out = np.sinc(t) * np.sinc(t / 3.0)
    return np.where(t < 3.0, out, 0.0)


_KERNELS = {
    "bilinear": (1.0, _triangle),
    "bicubic": (2.0, _catmull_rom),
    "lanczos": (3.0, _lanczos3),
}


@lru_cache(maxsize=128)
def _axis_weights(
    n_in: int, n_out: int, kind: str, antialias: bool
) -> tuple[np.ndarray, np.ndarray]:
    """Tap indices (n_out, taps) and normalized weights for one axis."""
    support, kernel = _KERNELS[kind]
    scale = n_in / n_out
    fscale = max(1.0, scale) if antialias else 1.0
    radius = support * fscale
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    base = np.ceil(src - radius).astype(np.int64)
    taps = int(np.floor(2.0 * radius)) + 1
    idx = base[:, None] + np.arange(taps)[None, :]
    w = kernel(np.abs((idx - src[:, None]) / fscale))
    idx = np.clip(idx, 0, n_in - 1)
    w = w / w.sum(axis=1, keepdims=True)
    return idx, np.ascontiguousarray(w)


def _nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    idx = np.floor((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(np.int64)
    return np.clip(idx, 0, n_in - 1)


def _apply_axis(x: np.ndarray, n_out: int, kind: str, antialias: bool, axis: int) -> np.ndarray:
    x = np.moveaxis(x, axis, -1)
    n_in = x.shape[-1]
    lead = x.shape[:-1]
    if kind == "nearest":
        out = x[..., _nearest_indices(n_in, n_out)]
    else:
        idx, wts = _axis_weights(n_in, n_out, kind, antialias)
        flat = np.ascontiguousarray(x.reshape(-1, n_in), dtype=np.float64)
        out = _accel.resample_axis(flat, idx, wts).reshape(lead + (n_out,))
    return np.moveaxis(out, -1, axis)


def resize(
    image: np.ndarray,
    out_shape: tuple[int, int],
    kind: str = "bicubic",
    antialias: bool = True,
) -> np.ndarray:
    """Resample the trailing two axes of ``image`` to ``out_shape``.

    ``antialias`` only affects axes that shrink; enlarging axes always use
    the plain interpolation kernel.
    """
    if kind not in KINDS:
        raise ParameterError(f"unknown resampling kind {kind!r}, expected one of {KINDS}")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim < 2:
        raise ShapeError(f"expected at least 2-D input, got shape {image.shape}")
    out_h, out_w = out_shape
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"output shape must be positive, got {out_shape}")
    out = _apply_axis(image, out_h, kind, antialias, axis=-2)
    return _apply_axis(out, out_w, kind, antialias, axis=-1)


def upsample_classical(image: np.ndarray, factor: int = 2, kind: str = "bilinear") -> np.ndarray:
    """Enlarge the trailing two axes by an integer factor."""
    if factor < 1:
        raise ParameterError(f"factor must be >= 1, got {factor}")
    image = np.asarray(image)
    h, w = image.shape[-2], image.shape[-1]
    return resize(image, (h * factor, w * factor), kind=kind, antialias=False)


def downsample2x(image: np.ndarray, kind: str = "bicubic", clamp: bool = True) -> np.ndarray:
    """Halve the trailing two axes; used to build super-resolution pairs."""
    image = np.asarray(image)
    h, w = image.shape[-2], image.shape[-1]
    if h % 2 or w % 2:
        raise ShapeError(f"spatial dims must be even, got {h}x{w}")
    out = resize(image, (h // 2, w // 2), kind=kind, antialias=True)
    return np.clip(out, 0.0, 1.0) if clamp else out
