"""Procedural cornea-like B-scan phantoms and dataset ingestion.

The phantom is the desk-scale stand-in for a clinical scan archive: two
bright circular arcs (anterior/posterior corneal surfaces) over a dark
background, optional feature flags (ICL, ring segments, eyelid, flare,
haze) and multiplicative gamma speckle.  Rendering is a pure function of
(params, seed), and the emitted labels are exactly the flags used to
render, so classifier experiments have exact ground truth.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, ParameterError
from .resample import resize

FEATURE_FLAGS = ("icl", "ring_segments", "eyelid", "flare", "haze")

# Table-derived marginal frequencies for the feature menu; the two artifact
# flags (eyelid, flare) have no tabulated frequency and use ad-hoc defaults.
DEFAULT_CLASS_MIX = {
    "icl": 0.012,
    "ring_segments": 0.112,
    "haze": 0.078,
    "eyelid": 0.15,
    "flare": 0.20,
}


class WidthClass(str, enum.Enum):
    WIDE16MM = "wide16mm"
    NARROW10MM = "narrow10mm"


class Provenance(str, enum.Enum):
    REAL = "real"
    PHANTOM = "phantom"
    GENERATED = "generated"
    UPSCALED = "upscaled"


@dataclass
class BScanImage:
    """Single-channel raster in [0, 1] on a square canvas."""

    pixels: np.ndarray
    width_class: WidthClass = WidthClass.WIDE16MM
    provenance: Provenance = Provenance.PHANTOM
    label: frozenset[str] | None = None

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 2 or self.pixels.shape[0] != self.pixels.shape[1]:
            raise ParameterError(f"canvas must be square 2-D, got {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise ParameterError("pixels must be finite")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ParameterError("pixels must lie in [0, 1]")

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


@dataclass
class DatasetStats:
    mean: float
    std: float
    count: int

    def __post_init__(self) -> None:
        if self.std <= 0.0:
            raise ParameterError(f"std must be positive, got {self.std}")
        if self.count < 1:
            raise ParameterError(f"count must be >= 1, got {self.count}")


@dataclass
class PhantomParams:
    """Geometry and texture knobs, lengths in pixels of the render canvas."""

    anterior_radius: float = 60.0
    posterior_radius: float = 52.0
    corneal_thickness: float = 9.0
    has_icl: bool = False
    has_ring_segments: bool = False
    has_eyelid: bool = False
    has_flare: bool = False
    has_haze: bool = False
    speckle_shape: float = 4.0
    intensity_scale: float = 1.0
    apex_depth: float = 19.0  # image row of the anterior apex

    def flags(self) -> frozenset[str]:
        active = [
            name
            for name, on in zip(
                FEATURE_FLAGS,
                (self.has_icl, self.has_ring_segments, self.has_eyelid, self.has_flare, self.has_haze),
            )
            if on
        ]
        return frozenset(active)

    def validate(self, size: int) -> None:
        if self.anterior_radius <= 0 or self.posterior_radius <= 0:
            raise ParameterError("radii must be positive")
        if self.corneal_thickness <= 0:
            raise ParameterError("corneal thickness must be positive")
        if not (self.speckle_shape > 0):
            raise ParameterError("speckle_shape must be positive (math.inf disables noise)")
        if not 0.0 <= self.intensity_scale <= 1.0:
            raise ParameterError("intensity_scale must lie in [0, 1]")
        # Posterior surface must stay strictly below the anterior one over the
        # rendered arc extent.  sag(u) = R - sqrt(R^2 - u^2) grows with u for
        # fixed R and shrinks with R, so the gap is smallest at the widest u
        # when the posterior radius exceeds the anterior one.
        u = _arc_half_width(size)
        for radius in (self.anterior_radius, self.posterior_radius):
            if radius <= u:
                raise ParameterError(f"radius {radius} too small for canvas {size}")
        gap = self.corneal_thickness + _sag(self.posterior_radius, u) - _sag(self.anterior_radius, u)
        if gap <= 0:
            raise ParameterError("posterior arc crosses the anterior arc inside the frame")

    @classmethod
    def scaled(cls, size: int, **overrides) -> "PhantomParams":
        """Defaults proportional to the canvas (the dataclass defaults fit 64 px)."""
        s = size / 64.0
        base = dict(
            anterior_radius=60.0 * s,
            posterior_radius=52.0 * s,
            corneal_thickness=9.0 * s,
            apex_depth=19.0 * s,
        )
        base.update(overrides)
        return cls(**base)


def _sag(radius: float, u: np.ndarray | float):
    return radius - np.sqrt(radius * radius - np.square(u))


def _arc_half_width(size: int) -> float:
    return 0.86 * (size / 2.0)


def _gaussian_line(dist2: np.ndarray, sigma: float) -> np.ndarray:
    # Hard support cut so feature contributions are exactly zero far away.
    cut = (6.0 * sigma) ** 2
    return np.where(dist2 < cut, np.exp(-dist2 / (2.0 * sigma * sigma)), 0.0)


def _arc_layer(
    xx: np.ndarray,
    yy: np.ndarray,
    cx: float,
    apex_y: float,
    radius: float,
    sigma: float,
    half_width: float,
) -> np.ndarray:
    cy = apex_y + radius
    dist = np.sqrt(np.square(xx - cx) + np.square(yy - cy)) - radius
    taper = np.exp(-((xx - cx) / half_width) ** 6)
    layer = _gaussian_line(np.square(dist), sigma) * taper
    return np.where(yy < cy, layer, 0.0)


def icl_region(params: PhantomParams, size: int) -> np.ndarray:
    """Boolean mask of every pixel the ICL feature is allowed to touch."""
    xx, yy, cx = _grid(size)
    mask = _icl_layer(xx, yy, cx, params, size) > 0.0
    return mask


def _grid(size: int):
    coords = np.arange(size, dtype=np.float64) + 0.5
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    return xx, yy, size / 2.0


def _icl_layer(xx, yy, cx, params: PhantomParams, size: int) -> np.ndarray:
    apex = params.apex_depth + params.corneal_thickness + 0.16 * size
    radius = 1.6 * params.posterior_radius
    sigma = max(0.6, 0.012 * size)
    half_width = 0.55 * (size / 2.0)
    return _arc_layer(xx, yy, cx, apex, radius, sigma, half_width)


def generate_phantom(
    params: PhantomParams, seed: int, size: int = 64
) -> tuple[BScanImage, frozenset[str]]:
    """Render one labeled phantom; bit-identical for fixed (params, seed)."""
    params.validate(size)
    rng = np.random.Generator(np.random.PCG64(seed))
    xx, yy, cx = _grid(size)
    sigma_line = max(0.7, 0.016 * size)
    half_width = _arc_half_width(size)

    # Speckle is drawn first, unconditionally, so images rendered from the
    # same seed share the noise field regardless of which flags are set.
    if math.isinf(params.speckle_shape):
        speckle = np.ones((size, size))
    else:
        k = params.speckle_shape
        speckle = rng.gamma(shape=k, scale=1.0 / k, size=(size, size))

    base = np.full((size, size), 0.04)
    anterior = _arc_layer(xx, yy, cx, params.apex_depth, params.anterior_radius, sigma_line, half_width)
    posterior_apex = params.apex_depth + params.corneal_thickness
    posterior = _arc_layer(xx, yy, cx, posterior_apex, params.posterior_radius, sigma_line, half_width)
    base += 0.95 * anterior + 0.80 * posterior

    # Stroma fill between the two surfaces.
    u = xx - cx
    inside = np.abs(u) < half_width
    y_ant = params.apex_depth + _sag(params.anterior_radius, np.clip(u, -half_width, half_width))
    y_post = posterior_apex + _sag(params.posterior_radius, np.clip(u, -half_width, half_width))
    stroma = inside & (yy > y_ant) & (yy < y_post)
    base += 0.38 * stroma * np.exp(-((u / half_width) ** 6))

    if params.has_haze:
        below = yy - y_ant
        band = inside & (below > 0) & (below < 0.12 * size)
        base += 0.30 * band * np.exp(-below / (0.06 * size))

    if params.has_icl:
        base += 0.55 * _icl_layer(xx, yy, cx, params, size)

    if params.has_ring_segments:
        mid_u = 0.38 * size
        for side in (-1.0, 1.0):
            sx = cx + side * mid_u
            sy = params.apex_depth + 0.5 * params.corneal_thickness + _sag(
                params.anterior_radius, mid_u
            )
            d2 = np.square(xx - sx) + np.square(yy - sy)
            base += 0.85 * _gaussian_line(d2, max(1.0, 0.022 * size))

    if params.has_eyelid:
        for side in (-1.0, 1.0):
            ex = cx + side * 0.42 * size
            d2 = np.square((xx - ex) / (0.16 * size)) + np.square(yy / (0.07 * size))
            base += 0.60 * np.where(d2 < 36.0, np.exp(-d2 / 2.0), 0.0)

    if params.has_flare:
        col = np.square((xx - cx) / max(1.0, 0.02 * size))
        extent = yy < (params.apex_depth + 0.35 * size)
        base += 0.70 * np.where(col < 36.0, np.exp(-col / 2.0), 0.0) * extent

    pixels = np.clip(base * params.intensity_scale * speckle, 0.0, 1.0)
    image = BScanImage(
        pixels=pixels.astype(np.float32),
        provenance=Provenance.PHANTOM,
        label=params.flags(),
    )
    return image, params.flags()


def sample_params(
    rng: np.random.Generator, size: int, flags: Mapping[str, bool] | None = None
) -> PhantomParams:
    """Draw per-scan geometry jitter around the canvas-scaled defaults."""
    s = size / 64.0
    flags = flags or {}
    return PhantomParams(
        anterior_radius=60.0 * s * rng.uniform(0.9, 1.15),
        posterior_radius=52.0 * s * rng.uniform(0.88, 1.08),
        corneal_thickness=9.0 * s * rng.uniform(0.8, 1.25),
        apex_depth=19.0 * s * rng.uniform(0.85, 1.15),
        speckle_shape=rng.uniform(3.0, 6.0),
        intensity_scale=rng.uniform(0.82, 1.0),
        has_icl=bool(flags.get("icl", False)),
        has_ring_segments=bool(flags.get("ring_segments", False)),
        has_eyelid=bool(flags.get("eyelid", False)),
        has_flare=bool(flags.get("flare", False)),
        has_haze=bool(flags.get("haze", False)),
    )


@dataclass
class DatasetSpec:
    n: int
    class_mix: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_CLASS_MIX))
    size: int = 64

    def validate(self) -> None:
        if self.n < 1:
            raise ParameterError(f"dataset size must be >= 1, got {self.n}")
        for name, p in self.class_mix.items():
            if name not in FEATURE_FLAGS:
                raise ParameterError(f"unknown feature flag {name!r}")
            if not 0.0 <= p <= 1.0:
                raise ParameterError(f"probability for {name!r} out of [0, 1]: {p}")
        if not 16 <= self.size <= 1024:
            raise ParameterError(f"canvas size out of range: {self.size}")


def render_dataset(
    spec: DatasetSpec, seed: int
) -> tuple[np.ndarray, list[dict]]:
    """In-memory dataset: (n, size, size) float32 stack plus label records."""
    spec.validate()
    images = np.empty((spec.n, spec.size, spec.size), dtype=np.float32)
    records: list[dict] = []
    for i in range(spec.n):
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(i,))
        rng = np.random.Generator(np.random.PCG64(ss))
        flags = {name: bool(rng.random() < p) for name, p in spec.class_mix.items()}
        params = sample_params(rng, spec.size, flags)
        img_seed = int(ss.generate_state(1, np.uint32)[0])
        image, label = generate_phantom(params, seed=img_seed, size=spec.size)
        images[i] = image.pixels
        records.append(
            {
                "file": f"images/{i:06d}.png",
                "flags": sorted(label),
                "seed": img_seed,
                "params": {
                    k: (v if not isinstance(v, bool) else bool(v))
                    for k, v in dataclasses.asdict(params).items()
                },
            }
        )
    return images, records


def save_png(pixels: np.ndarray, path: Path) -> None:
    arr = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L").save(path)


def load_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float32) / 255.0


def generate_dataset(spec: DatasetSpec, seed: int, out_dir: Path) -> Path:
    """Write images/NNNNNN.png, labels.jsonl and stats.json under ``out_dir``."""
    images, records = render_dataset(spec, seed)
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out_dir}: {exc}") from exc
    for img, rec in zip(images, records):
        save_png(img, out_dir / rec["file"])
    with open(out_dir / "labels.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    stats = compute_stats(images)
    with open(out_dir / "stats.json", "w") as fh:
        json.dump(dataclasses.asdict(stats), fh, indent=2)
    return out_dir


@dataclass
class Dataset:
    images: np.ndarray  # (n, size, size) float32 in [0, 1]
    records: list[dict]
    stats: DatasetStats | None = None
    skipped: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def size(self) -> int:
        return self.images.shape[-1]

    def flags(self, name: str) -> np.ndarray:
        return np.array([name in rec.get("flags", ()) for rec in self.records], dtype=bool)


def load_dataset(path: Path) -> Dataset:
    """Read a directory written by :func:`generate_dataset` (or ``ingest``)."""
    path = Path(path)
    labels = path / "labels.jsonl"
    if labels.exists():
        records = [json.loads(line) for line in labels.read_text().splitlines() if line.strip()]
        files = [path / rec["file"] for rec in records]
    else:
        files = sorted((path / "images").glob("*.png")) or sorted(path.glob("*.png"))
        records = [{"file": str(f.relative_to(path)), "flags": []} for f in files]
    if not files:
        raise DataError(f"no images found under {path}")
    images = np.stack([load_png(f) for f in files])
    stats = None
    stats_file = path / "stats.json"
    if stats_file.exists():
        stats = DatasetStats(**json.loads(stats_file.read_text()))
    return Dataset(images=images, records=records, stats=stats)


def ingest_folder(path: Path, target_size: int) -> Dataset:
    """Decode every grayscale image under ``path``, bicubic-resized to a square."""
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"{path} is not a directory")
    candidates = sorted(p for p in path.iterdir() if p.is_file())
    images, records, skipped = [], [], []
    for p in candidates:
        try:
            raw = load_png(p)
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            skipped.append({"file": p.name, "reason": str(exc)})
            continue
        resized = np.clip(resize(raw, (target_size, target_size), kind="bicubic"), 0.0, 1.0)
        images.append(resized.astype(np.float32))
        records.append({"file": p.name, "flags": []})
    if not images:
        raise DataError(f"no decodable images under {path}")
    return Dataset(images=np.stack(images), records=records, skipped=skipped)


def compute_stats(images: np.ndarray | Iterable[np.ndarray]) -> DatasetStats:
    """Scalar mean/std over every pixel of the dataset."""
    stack = np.asarray(images, dtype=np.float64)
    if stack.size == 0:
        raise DataError("cannot compute stats of an empty dataset")
    std = float(stack.std())
    if std < 1e-12:
        raise DataError("zero-variance dataset cannot be normalized")
    count = int(stack.shape[0]) if stack.ndim >= 3 else 1
    return DatasetStats(mean=float(stack.mean()), std=std, count=count)


def normalize(image: np.ndarray, stats: DatasetStats) -> np.ndarray:
    return (np.asarray(image, dtype=np.float64) - stats.mean) / stats.std


def denormalize(image: np.ndarray, stats: DatasetStats) -> np.ndarray:
    return np.asarray(image, dtype=np.float64) * stats.std + stats.mean
