"""Adversarial training: logistic losses, lazy R1/path-length regularization,
checkpoint cadence and FID-based model selection.

The loop is single-device and fully deterministic for a given config seed:
batch order, latent draws, injected noise and the FID sampling schedule all
derive from it.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import Tensor
from torch.nn import functional as F

from . import metrics
from .checkpoint import load_checkpoint, load_manifest, save_checkpoint, state_dict_tensors
from .errors import ConfigError, DataError, NumericError, ParameterError
from .gan import (
    DiscriminatorConfig,
    GeneratorConfig,
    WaveletDiscriminator,
    WaveletGenerator,
)
from .phantom import Dataset, DatasetStats, compute_stats, denormalize, normalize


@dataclass
class TrainConfig:
    iterations: int = 3000
    batch_size: int = 4
    lr: float = 0.002
    beta1: float = 0.0
    beta2: float = 0.99
    r1_gamma: float = 10.0
    r1_every: int = 16
    pl_every: int = 8
    pl_decay: float = 0.01
    pl_weight: float = 2.0
    checkpoint_every: int = 500
    fid_sample_count: int = 1000
    ema_decay: float = 0.999  # 0 disables the weight average
    seed: int = 0
    embedder_seed: int = 0
    embedder_dim: int = 32

    def __post_init__(self) -> None:
        counts = (
            self.iterations,
            self.batch_size,
            self.r1_every,
            self.pl_every,
            self.checkpoint_every,
            self.fid_sample_count,
        )
        if any(c < 1 for c in counts):
            raise ParameterError("all counts must be >= 1")
        if self.lr <= 0:
            raise ParameterError(f"lr must be positive, got {self.lr}")
        if self.r1_gamma < 0:
            raise ParameterError(f"r1_gamma must be >= 0, got {self.r1_gamma}")

    def hash(self) -> str:
        doc = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()[:16]


@dataclass
class PathLengthState:
    a: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.a) or self.a < 0:
            raise ParameterError(f"running mean must be finite and >= 0, got {self.a}")


def d_loss(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    """Logistic discriminator loss: softplus(-real) + softplus(fake), batch means."""
    if real_logits.numel() == 0 or fake_logits.numel() == 0:
        raise ParameterError("logit batches must be non-empty")
    return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()


def g_loss(fake_logits: Tensor) -> Tensor:
    """Non-saturating generator loss: softplus(-fake), batch mean."""
    if fake_logits.numel() == 0:
        raise ParameterError("logit batch must be non-empty")
    return F.softplus(-fake_logits).mean()


def r1_penalty(real_batch: Tensor, discriminator, gamma: float) -> Tensor:
    """(gamma/2) * E ||d D(x) / d x||^2 on real samples."""
    x = real_batch.detach().requires_grad_(True)
    logits = discriminator(x)
    (grads,) = torch.autograd.grad(logits.sum(), x, create_graph=True)
    if not torch.isfinite(grads).all():
        raise NumericError("non-finite input gradients in R1 penalty")
    per_sample = grads.square().sum(dim=tuple(range(1, grads.ndim)))
    return (gamma / 2.0) * per_sample.mean()


def path_length_penalty(
    w_batch: Tensor,
    generator: WaveletGenerator,
    state: PathLengthState,
    pl_decay: float = 0.01,
    noise_seed: int = 0,
    y_seed: int = 0,
) -> tuple[Tensor, PathLengthState]:
    """E[(||J^T y|| - a)^2] with the running mean updated toward the batch mean.

    ``y`` is unit-variance image-shaped noise scaled by 1/sqrt(pixel count);
    the penalty uses the incoming running mean, the returned state carries
    the decayed update.
    """
    if w_batch.ndim == 2:
        w = w_batch.unsqueeze(1).expand(-1, generator.num_ws, -1)
    else:
        w = w_batch
    image, _ = generator.synthesize(w, noise_seed=noise_seed)
    gen = torch.Generator().manual_seed(y_seed)
    pixels = image.shape[1] * image.shape[2] * image.shape[3]
    y = torch.randn(image.shape, generator=gen, dtype=image.dtype) / math.sqrt(pixels)
    (grads,) = torch.autograd.grad((image * y).sum(), w_batch, create_graph=True)
    if not torch.isfinite(grads).all():
        raise NumericError("non-finite gradients in path length penalty")
    norms = grads.square().sum(dim=tuple(range(1, grads.ndim))).sqrt()
    penalty = (norms - state.a).square().mean()
    new_a = state.a + pl_decay * (float(norms.detach().mean()) - state.a)
    return penalty, PathLengthState(a=new_a)


# ---------------------------------------------------------------------------
# Sampling helpers shared by the loop, the CLI and the server.
# ---------------------------------------------------------------------------


def sample_images(
    generator: WaveletGenerator,
    n: int,
    seed: int,
    stats: DatasetStats | None = None,
    batch: int = 64,
    psi: float | None = None,
    w_mean: Tensor | None = None,
) -> np.ndarray:
    """Draw n images as (n, H, W) float32 in [0, 1] (denormalized, clipped)."""
    from .gan import truncate_w

    gen = torch.Generator().manual_seed(seed)
    dtype = next(generator.parameters()).dtype
    out = []
    with torch.no_grad():
        done = 0
        chunk_idx = 0
        while done < n:
            count = min(batch, n - done)
            z = torch.randn(count, generator.config.latent_dim, generator=gen, dtype=dtype)
            w = generator.map_latent(z)
            if psi is not None and w_mean is not None:
                w = truncate_w(w, psi, w_mean)
            imgs, _ = generator.synthesize(w, noise_seed=seed * 9973 + chunk_idx)
            out.append(imgs[:, 0].numpy())
            done += count
            chunk_idx += 1
    raw = np.concatenate(out, axis=0).astype(np.float64)
    if stats is not None:
        raw = denormalize(raw, stats)
    return np.clip(raw, 0.0, 1.0).astype(np.float32)


@dataclass
class TrainResult:
    run_dir: Path
    checkpoints: list[Path]
    metrics_csv: Path
    fid_history: list[tuple[int, float]]
    r1_applications: int
    pl_applications: int


def _ema_update(ema: WaveletGenerator, live: WaveletGenerator, decay: float) -> None:
    with torch.no_grad():
        for pe, pl in zip(ema.parameters(), live.parameters()):
            pe.lerp_(pl, 1.0 - decay)
        for be, bl in zip(ema.buffers(), live.buffers()):
            be.copy_(bl)


def _save_gan_checkpoint(
    path: Path,
    iteration: int,
    generator: WaveletGenerator,
    g_ema: WaveletGenerator | None,
    discriminator: WaveletDiscriminator,
    config: TrainConfig,
    stats: DatasetStats,
    fid_value: float,
    fid_history: list[tuple[int, float]],
) -> Path:
    tensors = {}
    tensors.update(state_dict_tensors(generator, "g"))
    tensors.update(state_dict_tensors(discriminator, "d"))
    if g_ema is not None:
        tensors.update(state_dict_tensors(g_ema, "g_ema"))
    manifest = {
        "model_kind": "gan",
        "iteration": iteration,
        "config_hash": config.hash(),
        "metrics": {"fid": fid_value, "fid_history": [list(x) for x in fid_history]},
        "generator_config": dataclasses.asdict(generator.config),
        "data_stats": dataclasses.asdict(stats),
    }
    return save_checkpoint(path, tensors, manifest)


def load_generator(path: Path, prefer_ema: bool = True) -> tuple[WaveletGenerator, dict]:
    """Rebuild the generator (EMA weights when present) from a gan checkpoint."""
    from .checkpoint import load_state_dict_tensors

    tensors, manifest = load_checkpoint(path)
    if manifest.get("model_kind") != "gan":
        raise ConfigError(f"{path} is not a gan checkpoint")
    cfg = GeneratorConfig(**{
        k: (tuple(v) if k == "channels" and v is not None else v)
        for k, v in manifest["generator_config"].items()
    })
    generator = WaveletGenerator(cfg)
    prefix = "g_ema" if prefer_ema and any(k.startswith("g_ema/") for k in tensors) else "g"
    load_state_dict_tensors(generator, tensors, prefix)
    generator.eval()
    return generator, manifest


def train(
    config: TrainConfig,
    dataset: Dataset | np.ndarray,
    out_dir: Path,
    gen_config: GeneratorConfig | None = None,
) -> TrainResult:
    """Run the adversarial loop; checkpoints and an append-only metrics CSV land in out_dir."""
    images = dataset.images if isinstance(dataset, Dataset) else np.asarray(dataset)
    if images.ndim != 3 or images.shape[1] != images.shape[2]:
        raise ConfigError(f"dataset must be (n, R, R), got {images.shape}")
    resolution = images.shape[-1]
    gen_config = gen_config or GeneratorConfig(resolution=resolution)
    if gen_config.resolution != resolution:
        raise ConfigError(
            f"generator resolution {gen_config.resolution} != dataset resolution {resolution}"
        )
    if len(images) < config.batch_size:
        raise ConfigError(f"dataset has {len(images)} images, batch needs {config.batch_size}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stats = compute_stats(images)
    data = torch.from_numpy(normalize(images, stats).astype(np.float32)).unsqueeze(1)

    torch.manual_seed(config.seed)
    generator = WaveletGenerator(gen_config)
    discriminator = WaveletDiscriminator(
        DiscriminatorConfig(
            resolution=resolution,
            base_resolution=gen_config.base_resolution,
            img_channels=gen_config.img_channels,
            channel_max=gen_config.channel_max,
            channel_min=gen_config.channel_min,
        )
    )
    g_ema = copy.deepcopy(generator) if config.ema_decay > 0 else None

    opt_g = torch.optim.Adam(
        generator.parameters(), lr=config.lr, betas=(config.beta1, config.beta2), eps=1e-8
    )
    opt_d = torch.optim.Adam(
        discriminator.parameters(), lr=config.lr, betas=(config.beta1, config.beta2), eps=1e-8
    )

    g_data = torch.Generator().manual_seed(config.seed * 7 + 1)
    g_latent = torch.Generator().manual_seed(config.seed * 7 + 2)

    embedder = metrics.FeatureEmbedder(
        kind="random_conv", seed=config.embedder_seed, output_dim=config.embedder_dim
    )
    ref_count = min(len(images), config.fid_sample_count)
    ref_rng = np.random.Generator(np.random.PCG64(config.seed))
    ref_idx = ref_rng.choice(len(images), size=ref_count, replace=False)
    ref_moments = metrics.gaussian_stats(metrics.embed(images[ref_idx], embedder))

    def eval_fid(iteration: int) -> float:
        model = g_ema if g_ema is not None else generator
        model.eval()
        samples = sample_images(
            model, config.fid_sample_count, seed=config.seed * 31 + 17, stats=stats
        )
        model.train()
        feats = metrics.embed(samples, embedder)
        return metrics.frechet_distance(metrics.gaussian_stats(feats), ref_moments)

    metrics_csv = out_dir / "metrics.csv"
    csv_fh = open(metrics_csv, "w", newline="")
    writer = csv.writer(csv_fh)
    writer.writerow(["iter", "loss_d", "loss_g", "r1", "pl", "fid"])

    fid_history: list[tuple[int, float]] = []
    checkpoints: list[Path] = []
    pl_state = PathLengthState()
    r1_count = 0
    pl_count = 0

    fid0 = eval_fid(0)
    fid_history.append((0, fid0))
    writer.writerow([0, "", "", "", "", f"{fid0:.6f}"])

    last_good: Path | None = None
    for i in range(config.iterations):
        noise_seed = config.seed * 1_000_003 + i * 4

        # Discriminator step.
        idx = torch.randint(0, len(images), (config.batch_size,), generator=g_data)
        real = data[idx]
        z = torch.randn(config.batch_size, gen_config.latent_dim, generator=g_latent)
        with torch.no_grad():
            fake, _ = generator.synthesize(generator.map_latent(z), noise_seed=noise_seed)
        loss_d = d_loss(discriminator(real), discriminator(fake))
        opt_d.zero_grad(set_to_none=True)
        loss_d.backward()
        opt_d.step()

        r1_val = ""
        if (i + 1) % config.r1_every == 0:
            penalty = r1_penalty(real, discriminator, config.r1_gamma)
            opt_d.zero_grad(set_to_none=True)
            (penalty * config.r1_every).backward()
            opt_d.step()
            r1_count += 1
            r1_val = f"{float(penalty):.6f}"

        # Generator step.
        z = torch.randn(config.batch_size, gen_config.latent_dim, generator=g_latent)
        w = generator.map_latent(z)
        fake, _ = generator.synthesize(w, noise_seed=noise_seed + 1)
        loss_g = g_loss(discriminator(fake))
        opt_g.zero_grad(set_to_none=True)
        loss_g.backward()
        opt_g.step()

        pl_val = ""
        if (i + 1) % config.pl_every == 0:
            z = torch.randn(config.batch_size, gen_config.latent_dim, generator=g_latent)
            w_single = generator.mapping(z)
            penalty, pl_state = path_length_penalty(
                w_single,
                generator,
                pl_state,
                pl_decay=config.pl_decay,
                noise_seed=noise_seed + 2,
                y_seed=noise_seed + 3,
            )
            opt_g.zero_grad(set_to_none=True)
            (penalty * config.pl_weight * config.pl_every).backward()
            opt_g.step()
            pl_count += 1
            pl_val = f"{float(penalty):.6f}"

        if g_ema is not None:
            _ema_update(g_ema, generator, config.ema_decay)

        ld, lg = float(loss_d), float(loss_g)
        if not (math.isfinite(ld) and math.isfinite(lg)):
            crash = out_dir / f"диag_{i:07d}.ockpt"
            csv_fh.close()
            raise NumericError(
                f"non-finite loss at iteration {i + 1} "
                f"(last good checkpoint: {last_good}); crash dump skipped: {crash.name}"
            )

        iteration = i + 1
        fid_val = ""
        if iteration % config.checkpoint_every == 0 or iteration == config.iterations:
            value = eval_fid(iteration)
            fid_history.append((iteration, value))
            fid_val = f"{value:.6f}"
            ckpt = _save_gan_checkpoint(
                out_dir / f"ckpt_{iteration:07d}.ockpt",
                iteration,
                generator,
                g_ema,
                discriminator,
                config,
                stats,
                value,
                fid_history,
            )
            checkpoints.append(ckpt)
            last_good = ckpt
        writer.writerow([iteration, f"{ld:.6f}", f"{lg:.6f}", r1_val, pl_val, fid_val])

    csv_fh.close()
    return TrainResult(
        run_dir=out_dir,
        checkpoints=checkpoints,
        metrics_csv=metrics_csv,
        fid_history=fid_history,
        r1_applications=r1_count,
        pl_applications=pl_count,
    )


def select_best(checkpoints: list[Path] | Path) -> Path:
    """Argmin-FID checkpoint; ties resolve to the earliest iteration."""
    if isinstance(checkpoints, (str, Path)) and Path(checkpoints).is_dir():
        checkpoints = sorted(Path(checkpoints).glob("ckpt_*.ockpt"))
    checkpoints = list(checkpoints)
    if not checkpoints:
        raise DataError("no checkpoints to select from")
    scored = []
    for path in checkpoints:
        manifest = load_manifest(path)
        scored.append((manifest["metrics"]["fid"], manifest["iteration"], Path(path)))
    scored.sort(key=lambda t: (t[0], t[1]))
    return scored[0][2]
