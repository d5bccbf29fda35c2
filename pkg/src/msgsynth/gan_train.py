"""WGAN-GP training of the MSG-GAN pair with RMSprop."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image

from .autodiff import Parameter, Tensor, grad, no_grad
from .checkpoint import CheckpointError, load_checkpoint, read_manifest, save_checkpoint
from .data import build_pyramid, denormalize
from .msggan import Discriminator, DiscriminatorSpec, Generator, GeneratorSpec

log = logging.getLogger(__name__)

TELEMETRY_FIELDS = ("step", "d_loss", "g_loss", "gp")


@dataclass(frozen=True)
class GanTrainingConfig:
    learning_rate: float = 3e-4
    rmsprop_decay: float = 0.9
    rmsprop_eps: float = 1e-8
    gp_lambda: float = 10.0
    critic_iters: int = 1
    batch_size: int = 16
    total_steps: int = 1000
    seed: int = 0
    sample_every: int = 0
    checkpoint_every: int = 0
    # Model size; an empty channel list means the published schedule.
    latent_dim: int = 512
    channels: tuple[int, ...] = ()

    def __post_init__(self):
        if self.critic_iters < 1:
            raise ValueError("critic_iters must be >= 1")
        if self.batch_size < 1 or self.total_steps < 0:
            raise ValueError("batch_size must be >= 1 and total_steps >= 0")
        if self.learning_rate < 0 or self.gp_lambda < 0 or self.rmsprop_eps < 0:
            raise ValueError("learning_rate, gp_lambda and rmsprop_eps must be non-negative")
        if not 0 <= self.rmsprop_decay < 1:
            raise ValueError("rmsprop_decay must lie in [0, 1)")


class NonFiniteError(RuntimeError):
    """Raised when a loss or gradient is NaN/inf; ``snapshot`` holds diagnostics."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------
def gradient_penalty(critic: Callable[[list[Tensor]], Tensor], real: Sequence[Tensor],
                     fake: Sequence[Tensor], lam: float, rng: np.random.Generator | None = None,
                     eps: np.ndarray | None = None) -> Tensor:
    """``lam * mean((||grad_x D(x_hat)|| - 1)^2)`` over interpolates.

    One mixing weight per sample, shared by every scale; the gradient norm is
    taken jointly over all scales. The result stays differentiable w.r.t. the
    critic's parameters.
    """
    if len(real) != len(fake):
        raise ValueError(f"depth mismatch: {len(real)} real scales vs {len(fake)} fake")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    n = real[0].shape[0]
    for r, f in zip(real, fake):
        if r.shape != f.shape:
            raise ValueError(f"shape mismatch {r.shape} vs {f.shape}")
    if eps is None:
        eps = (rng or np.random.default_rng()).uniform(size=n)
    eps = np.asarray(eps, dtype=np.float64).reshape(n)
    mixed = []
    for r, f in zip(real, fake):
        w = eps.reshape((n,) + (1,) * (r.ndim - 1)).astype(r.dtype)
        mixed.append(Tensor(w * r.data + (1 - w) * f.data, requires_grad=True))
    scores = critic(mixed)
    grads = grad(scores.sum(), mixed, create_graph=True)
    sq = None
    for g in grads:
        term = (g * g).reshape(n, -1).sum(axis=1)
        sq = term if sq is None else sq + term
    norm = (sq + 1e-12) ** 0.5
    dev = norm - 1.0
    return (dev * dev).mean() * lam


def wgan_losses(d_real: Tensor, d_fake: Tensor, gp) -> tuple[Tensor, Tensor]:
    if d_real.shape[0] != d_fake.shape[0]:
        raise ValueError("real and fake batches must have equal size")
    d_loss = d_fake.mean() - d_real.mean() + gp
    g_loss = -d_fake.mean()
    return d_loss, g_loss


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------
def rmsprop_step(params: Sequence[Parameter], grads: Sequence[np.ndarray], cache: list[np.ndarray],
                 lr: float, alpha: float = 0.9, eps: float = 1e-8) -> None:
    """In-place RMSprop: ``cache = a*cache + (1-a)*g^2; p -= lr*g/(sqrt(cache)+eps)``.

    All gradients are checked before any parameter moves.
    """
    grads = [g.data if isinstance(g, Tensor) else np.asarray(g) for g in grads]
    for p, g, c in zip(params, grads, cache):
        if g.shape != p.shape or c.shape != p.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, cache {c.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient; step aborted", {"param_shape": p.shape})
    for p, g, c in zip(params, grads, cache):
        c *= alpha
        c += (1.0 - alpha) * g * g
        p.data -= lr * g / (np.sqrt(c) + eps)
        p.grad = g


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------
@dataclass
class TrainState:
    generator: Generator
    discriminator: Discriminator
    rng: np.random.Generator
    seed: int = 0
    step: int = 0
    g_cache: list[np.ndarray] = field(default_factory=list)
    d_cache: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.g_cache:
            self.g_cache = [np.zeros_like(p.data) for p in self.generator.parameters()]
        if not self.d_cache:
            self.d_cache = [np.zeros_like(p.data) for p in self.discriminator.parameters()]

    @classmethod
    def create(cls, gen_spec: GeneratorSpec, seed: int = 0, dtype=np.float32) -> "TrainState":
        ss = np.random.SeedSequence(seed)
        g_seed, d_seed, loop_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
        gen = Generator(gen_spec, g_seed, dtype)
        disc = Discriminator(DiscriminatorSpec.matching(gen_spec), d_seed, dtype)
        return cls(gen, disc, np.random.default_rng(loop_seed), seed=seed)

    # -- checkpointing ------------------------------------------------------
    def manifest(self) -> dict:
        g = self.generator.spec
        return {
            "kind": "gan",
            "step": self.step,
            "seed": self.seed,
            "dtype": self.generator.dtype.name,
            "spec.depth": g.depth,
            "spec.latent_dim": g.latent_dim,
            "spec.channels": ",".join(map(str, g.channels)),
            "spec.leaky_slope": repr(g.leaky_slope),
            "spec.equalized_lr": g.equalized_lr,
            "spec.mbstd_eps": repr(self.discriminator.spec.mbstd_eps),
            "rng_state": json.dumps(self.rng.bit_generator.state, sort_keys=True),
        }

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, module, cache in (("generator", self.generator, self.g_cache),
                                      ("discriminator", self.discriminator, self.d_cache)):
            names = [name for name, _ in module.named_parameters()]
            for name, arr in module.state_arrays().items():
                out[f"{prefix}.{name}"] = arr
            for name, c in zip(names, cache):
                out[f"rmsprop.{prefix}.{name}"] = c
        return out

    def save(self, directory) -> Path:
        if self.generator.dtype != np.float32:
            raise CheckpointError("checkpoints store float32 parameters only")
        return save_checkpoint(directory, self.manifest(), self.arrays())

    def load(self, directory) -> "TrainState":
        """Restore in place. Nothing is modified unless the whole checkpoint
        matches this state's architecture."""
        meta, arrays = load_checkpoint(directory)
        mine = self.manifest()
        for key in [k for k in mine if k.startswith("spec.") or k == "dtype"]:
            if meta.get(key) != str(mine[key]):
                raise CheckpointError(f"checkpoint {key}={meta.get(key)!r} does not match {mine[key]!r}")
        current = self.arrays()
        if set(arrays) != set(current):
            raise CheckpointError("checkpoint array set does not match the model")
        for name, arr in arrays.items():
            if arr.shape != current[name].shape:
                raise CheckpointError(f"shape mismatch for {name}: {arr.shape} vs {current[name].shape}")
        for prefix, module, cache in (("generator", self.generator, self.g_cache),
                                      ("discriminator", self.discriminator, self.d_cache)):
            module.load_state_arrays({k[len(prefix) + 1:]: v for k, v in arrays.items()
                                      if k.startswith(prefix + ".")})
            names = [name for name, _ in module.named_parameters()]
            for i, name in enumerate(names):
                cache[i] = arrays[f"rmsprop.{prefix}.{name}"].copy()
        self.step = int(meta["step"])
        self.seed = int(meta["seed"])
        self.rng.bit_generator.state = json.loads(meta["rng_state"])
        return self

    @classmethod
    def from_checkpoint(cls, directory) -> "TrainState":
        meta = read_manifest(directory)
        spec = spec_from_manifest(meta)
        state = cls.create(spec, seed=int(meta["seed"]))
        return state.load(directory)


def spec_from_manifest(meta: dict) -> GeneratorSpec:
    return GeneratorSpec(
        depth=int(meta["spec.depth"]),
        latent_dim=int(meta["spec.latent_dim"]),
        channels=tuple(int(c) for c in meta["spec.channels"].split(",")),
        leaky_slope=float(meta["spec.leaky_slope"]),
        equalized_lr=meta["spec.equalized_lr"] == "True",
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------
def _global_norm(grads: Sequence[Tensor]) -> float:
    return math.sqrt(sum(float((g.data.astype(np.float64) ** 2).sum()) for g in grads))


def _check_finite(values: dict, state: TrainState) -> None:
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if bad:
        snap = dict(values, step=state.step)
        raise NonFiniteError(f"non-finite values at step {state.step}: {sorted(bad)}", snap)


def train_step(state: TrainState, real: Sequence[Tensor], config: GanTrainingConfig) -> dict:
    """``critic_iters`` critic updates, then one generator update."""
    gen, disc = state.generator, state.discriminator
    disc.check_pyramid(real)
    n = real[0].shape[0]
    d_params = disc.trainable_parameters()
    g_params = gen.trainable_parameters()
    telemetry = {}
    for _ in range(config.critic_iters):
        z = gen.sample_latents(n, state.rng)
        with no_grad():
            fake = gen(z)
        gp = gradient_penalty(disc, real, fake, config.gp_lambda, state.rng)
        d_real, d_fake = disc(real), disc(fake)
        d_loss, _ = wgan_losses(d_real, d_fake, gp)
        values = {"d_loss": d_loss.item(), "gp": gp.item()}
        _check_finite(values, state)
        d_grads = grad(d_loss, d_params)
        rmsprop_step(d_params, d_grads, state.d_cache, config.learning_rate,
                     config.rmsprop_decay, config.rmsprop_eps)
        telemetry.update(values, d_grad_norm=_global_norm(d_grads))

    z = gen.sample_latents(n, state.rng)
    g_loss = -disc(gen(z)).mean()
    _check_finite({"g_loss": g_loss.item()}, state)
    g_grads = grad(g_loss, g_params)
    rmsprop_step(g_params, g_grads, state.g_cache, config.learning_rate,
                 config.rmsprop_decay, config.rmsprop_eps)
    telemetry.update(g_loss=g_loss.item(), g_grad_norm=_global_norm(g_grads))
    state.step += 1
    telemetry["step"] = state.step
    return telemetry


def sample_batch(images: np.ndarray, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    idx = rng.choice(len(images), size=min(batch_size, len(images)), replace=False)
    return images[np.sort(idx)]


def train_gan(state: TrainState, images: np.ndarray, config: GanTrainingConfig, steps: int,
              out_dir=None, callback: Callable[[TrainState, dict], bool] | None = None) -> list[dict]:
    """Run ``steps`` training steps on ``images`` (N x 3 x S x S in [-1, 1]).

    With ``out_dir`` telemetry is appended to ``telemetry.csv`` and samples /
    checkpoints are written on their configured cadence. ``callback`` may
    return True to stop early.
    """
    depth = state.generator.spec.depth
    images = images.astype(state.generator.dtype, copy=False)
    out_dir = Path(out_dir) if out_dir is not None else None
    history = []
    writer = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        tele_path = out_dir / "telemetry.csv"
        fresh = not tele_path.exists() or state.step == 0
        fh = tele_path.open("w" if fresh else "a", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(TELEMETRY_FIELDS)
    try:
        for _ in range(steps):
            batch = sample_batch(images, config.batch_size, state.rng)
            tele = train_step(state, build_pyramid(batch, depth), config)
            history.append(tele)
            if writer is not None:
                writer.writerow([tele["step"]] + [repr(tele[k]) for k in TELEMETRY_FIELDS[1:]])
                if config.sample_every and state.step % config.sample_every == 0:
                    emit_sample_grid(state.generator, 4, 4, config.seed,
                                     out_dir / "samples" / f"step_{state.step:07d}.png")
                if config.checkpoint_every and state.step % config.checkpoint_every == 0:
                    state.save(out_dir / "checkpoint")
            if callback is not None and callback(state, tele):
                break
    finally:
        if writer is not None:
            fh.close()
    if out_dir is not None:
        state.save(out_dir / "checkpoint")
    return history


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------
def generate_images(generator: Generator, count: int, seed: int, batch_size: int = 64) -> np.ndarray:
    """Finest-scale samples, N x 3 x S x S, unclamped."""
    rng = np.random.default_rng(seed)
    chunks = []
    with no_grad():
        for start in range(0, count, batch_size):
            z = generator.sample_latents(min(batch_size, count - start), rng)
            chunks.append(generator(z)[-1].data)
    r = generator.spec.output_resolution
    return np.concatenate(chunks) if chunks else np.zeros((0, 3, r, r), dtype=generator.dtype)


def grid_image(samples: np.ndarray, n_rows: int, n_cols: int) -> np.ndarray:
    """Tile N x 3 x S x S samples (row-major) into an H x W x 3 uint8 array."""
    n, _, s, _ = samples.shape
    if n != n_rows * n_cols:
        raise ValueError(f"need {n_rows * n_cols} samples, got {n}")
    pix = denormalize(samples).transpose(0, 2, 3, 1)
    return pix.reshape(n_rows, n_cols, s, s, 3).transpose(0, 2, 1, 3, 4).reshape(n_rows * s, n_cols * s, 3)


def emit_sample_grid(generator: Generator, n_rows: int, n_cols: int, seed: int, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    samples = generate_images(generator, n_rows * n_cols, seed)
    Image.fromarray(grid_image(samples, n_rows, n_cols), mode="RGB").save(path, format="PNG")
    return path
