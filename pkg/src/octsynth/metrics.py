"""Distribution and perceptual similarity metrics.

The feature extractors here are deterministic, seeded substitutes for
pretrained embedding networks: absolute scores are implementation-relative,
orderings and the analytic Gaussian cases are what the toolkit guarantees.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import DataError, NumericError, ParameterError, ShapeError
from .resample import resize

EIGENVALUE_FLOOR = -1e-6
_PERCEPTUAL_SEED = 710  # fixed for the lifetime of the metric
_PERCEPTUAL_CHANNELS = (8, 16, 32)


# ---------------------------------------------------------------------------
# Gaussian moments and the Fréchet distance.
# ---------------------------------------------------------------------------


@dataclass
class GaussianMoments:
    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.ndim != 1 or self.sigma.shape != (self.mu.size, self.mu.size):
            raise ShapeError(
                f"moments shape mismatch: mu {self.mu.shape}, sigma {self.sigma.shape}"
            )
        if np.abs(self.sigma - self.sigma.T).max() > 1e-9:
            raise NumericError("covariance is not symmetric within 1e-9")


def gaussian_stats(features: np.ndarray) -> GaussianMoments:
    """Sample mean and unbiased covariance, symmetrized."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(f"features must be (n, d), got {features.shape}")
    n = features.shape[0]
    if n < 2:
        raise DataError(f"need at least 2 samples for a covariance, got {n}")
    mu = features.mean(axis=0)
    centered = features - mu
    sigma = centered.T @ centered / (n - 1)
    sigma = (sigma + sigma.T) / 2.0
    return GaussianMoments(mu=mu, sigma=sigma, n=n)


def _clamped_eigh(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh((matrix + matrix.T) / 2.0)
    if vals.min() < EIGENVALUE_FLOOR:
        raise NumericError(f"matrix is not PSD: eigenvalue {vals.min():.3e} < {EIGENVALUE_FLOOR}")
    return np.clip(vals, 0.0, None), vecs


def sqrtm_psd(matrix: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition."""
    vals, vecs = _clamped_eigh(np.asarray(matrix, dtype=np.float64))
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(m1: GaussianMoments, m2: GaussianMoments) -> float:
    """||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)."""
    if m1.mu.size != m2.mu.size:
        raise ShapeError(f"dimension mismatch: {m1.mu.size} vs {m2.mu.size}")
    root1 = sqrtm_psd(m1.sigma)
    inner = root1 @ m2.sigma @ root1
    vals, _ = _clamped_eigh(inner)
    mean_term = float(np.sum(np.square(m1.mu - m2.mu)))
    trace_term = float(np.trace(m1.sigma) + np.trace(m2.sigma) - 2.0 * np.sum(np.sqrt(vals)))
    return max(mean_term + trace_term, 0.0)


# ---------------------------------------------------------------------------
# Feature embedders.
# ---------------------------------------------------------------------------


@dataclass
class FeatureEmbedder:
    kind: str = "random_conv"
    seed: int = 0
    output_dim: int = 32
    path: Path | None = None  # only for kind="external_file"

    def __post_init__(self) -> None:
        if self.kind not in ("downsample_pca", "random_conv", "external_file"):
            raise ParameterError(f"unknown embedder kind {self.kind!r}")
        if self.output_dim < 2:
            raise ParameterError(f"output_dim must be >= 2, got {self.output_dim}")
        if self.kind == "external_file" and self.path is None:
            raise ParameterError("external_file embedder needs a path")


def _conv_stack_weights(seed: int, channels: tuple[int, ...]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded He-scaled 3x3 stride-2 kernels, one (weight, bias) pair per stage."""
    rng = np.random.Generator(np.random.PCG64(seed))
    weights = []
    in_ch = 1
    for out_ch in channels:
        fan_in = in_ch * 9
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_ch, in_ch, 3, 3))
        b = np.zeros(out_ch)
        weights.append((w, b))
        in_ch = out_ch
    return weights


def _conv_s2(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stride-2, pad-1, 3x3 convolution on (n, c, h, w)."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    windows = windows[:, :, ::2, ::2]  # (n, c, h/2, w/2, 3, 3)
    out = np.einsum("ncijab,ocab->noij", windows, w, optimize=True)
    return out + b[None, :, None, None]


def _lrelu(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0.0, x, 0.2 * x)


def _conv_features(images: np.ndarray, weights) -> list[np.ndarray]:
    x = images[:, None, :, :].astype(np.float64)
    feats = []
    for w, b in weights:
        x = _lrelu(_conv_s2(x, w, b))
        feats.append(x)
    return feats


def _as_image_stack(images) -> np.ndarray:
    stack = np.asarray(images, dtype=np.float64)
    if stack.ndim == 2:
        stack = stack[None]
    if stack.ndim != 3:
        raise ShapeError(f"expected (n, H, W) images, got {stack.shape}")
    if stack.shape[0] < 1:
        raise DataError("need at least one image")
    return stack


_PCA_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _pca_basis(seed: int, dim: int) -> np.ndarray:
    """Principal axes of a seeded smooth-noise ensemble on the 8x8 thumbnail."""
    key = (seed, dim)
    if key not in _PCA_CACHE:
        rng = np.random.Generator(np.random.PCG64(seed))
        noise = rng.normal(size=(512, 24, 24))
        from scipy.ndimage import gaussian_filter

        smooth = np.stack([gaussian_filter(n, sigma=2.0) for n in noise])
        thumbs = resize(smooth, (8, 8), kind="bilinear").reshape(512, 64)
        thumbs -= thumbs.mean(axis=0)
        _, _, vt = np.linalg.svd(thumbs, full_matrices=False)
        _PCA_CACHE[key] = vt[:dim].T  # (64, dim)
    return _PCA_CACHE[key]


def load_embedder_weights(path: Path) -> list[tuple[np.ndarray, np.ndarray]]:
    from .checkpoint import load_checkpoint

    tensors, manifest = load_checkpoint(path)
    if manifest.get("model_kind") != "embedder":
        raise ParameterError(f"{path} is not an embedder checkpoint")
    weights = []
    stage = 0
    while f"stage{stage}.weight" in tensors:
        weights.append(
            (tensors[f"stage{stage}.weight"].astype(np.float64),
             tensors[f"stage{stage}.bias"].astype(np.float64))
        )
        stage += 1
    if not weights:
        raise ParameterError(f"no conv stages found in {path}")
    return weights


def embed(images, embedder: FeatureEmbedder) -> np.ndarray:
    """(n, H, W) images -> (n, d) deterministic features."""
    stack = _as_image_stack(images)
    if embedder.kind == "downsample_pca":
        if embedder.output_dim > 64:
            raise ParameterError("downsample_pca supports output_dim <= 64")
        thumbs = resize(stack, (8, 8), kind="bilinear").reshape(len(stack), 64)
        feats = thumbs @ _pca_basis(embedder.seed, embedder.output_dim)
    else:
        if embedder.kind == "external_file":
            weights = load_embedder_weights(embedder.path)
            if weights[-1][0].shape[0] != embedder.output_dim:
                raise ParameterError(
                    f"external embedder emits {weights[-1][0].shape[0]} channels, "
                    f"config says {embedder.output_dim}"
                )
        else:
            channels = (8, 16, embedder.output_dim)
            weights = _conv_stack_weights(embedder.seed, channels)
        feats = _conv_features(stack, weights)[-1].mean(axis=(2, 3))
    if not np.all(np.isfinite(feats)):
        raise NumericError("embedding produced non-finite values")
    return feats


def save_embedder(path: Path, seed: int, output_dim: int) -> Path:
    """Materialize the seeded conv embedder as an external_file checkpoint."""
    from .checkpoint import save_checkpoint

    weights = _conv_stack_weights(seed, (8, 16, output_dim))
    tensors = {}
    for i, (w, b) in enumerate(weights):
        tensors[f"stage{i}.weight"] = w.astype(np.float32)
        tensors[f"stage{i}.bias"] = b.astype(np.float32)
    save_checkpoint(path, tensors, {"model_kind": "embedder", "iteration": 0})
    return path


def fid(set_a, set_b, embedder: FeatureEmbedder | None = None) -> float:
    """Fréchet distance between Gaussian fits of embedded image sets."""
    embedder = embedder or FeatureEmbedder()
    feats_a = embed(set_a, embedder)
    feats_b = embed(set_b, embedder)
    return frechet_distance(gaussian_stats(feats_a), gaussian_stats(feats_b))


def dataset_digest(images: np.ndarray) -> str:
    """Stable content hash used for leakage checks and config hashing."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(np.asarray(images, dtype=np.float32)).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Perceptual (LPIPS-style) distance: fixed random conv stack, unit-normalized
# features, spatially averaged squared differences summed over stages.
# ---------------------------------------------------------------------------


def _perceptual_weights() -> list[tuple[np.ndarray, np.ndarray]]:
    return _conv_stack_weights(_PERCEPTUAL_SEED, _PERCEPTUAL_CHANNELS)


def _normalize_channels(feats: np.ndarray, eps: float = 1e-10) -> np.ndarray:
    norm = np.sqrt(np.sum(np.square(feats), axis=1, keepdims=True)) + eps
    return feats / norm


def perceptual_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Pseudometric on equal-resolution images: 0 iff features coincide."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"images must share a 2-D shape, got {a.shape} vs {b.shape}")
    weights = _perceptual_weights()
    feats_a = _conv_features(a[None], weights)
    feats_b = _conv_features(b[None], weights)
    total = 0.0
    for fa, fb in zip(feats_a, feats_b):
        diff = _normalize_channels(fa) - _normalize_channels(fb)
        total += float(np.mean(np.sum(np.square(diff), axis=1)))
    return total


class PerceptualTorch(nn.Module):
    """Differentiable twin of :func:`perceptual_distance` for training losses.

    Uses the same fixed seeded kernels; values match the numpy metric to
    float precision.
    """

    def __init__(self, dtype: torch.dtype = torch.float32) -> None:
        super().__init__()
        for i, (w, b) in enumerate(_perceptual_weights()):
            self.register_buffer(f"w{i}", torch.as_tensor(w, dtype=dtype))
            self.register_buffer(f"b{i}", torch.as_tensor(b, dtype=dtype))
        self.stages = len(_PERCEPTUAL_CHANNELS)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for i in range(self.stages):
            w = getattr(self, f"w{i}")
            b = getattr(self, f"b{i}")
            x = nn.functional.conv2d(x, w, b, stride=2, padding=1)
            x = nn.functional.leaky_relu(x, 0.2)
            feats.append(x)
        return feats

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        total = None
        for fa, fb in zip(self.features(a), self.features(b)):
            na = fa / (fa.square().sum(dim=1, keepdim=True).sqrt() + 1e-10)
            nb = fb / (fb.square().sum(dim=1, keepdim=True).sqrt() + 1e-10)
            term = (na - nb).square().sum(dim=1).mean(dim=[1, 2])
            total = term if total is None else total + term
        return total.mean()
