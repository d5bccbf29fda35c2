"""Multi-scale-gradient GAN generator and critic.

Every generator block emits an RGB image through a 1x1 conv; the critic takes
the whole pyramid, concatenating each raw RGB scale with its incoming feature
maps. Block ``k`` (0-based, coarsest first) works at resolution ``4 * 2**k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import (
    Parameter,
    Tensor,
    avg_pool_2x2,
    concat_channels,
    conv2d_transposed_4x4,
    leaky_relu,
    minibatch_stddev,
    upsample_nearest_2x,
)
from .autodiff.ops import DEFAULT_LEAKY_SLOPE, MINIBATCH_STD_EPS
from .nn import Conv2d, Dense, Module, he_std

FULL_SCHEDULE = (512, 512, 512, 512, 256, 128, 64, 32, 16)

Recorder = Optional[Callable[[int, str, str, tuple], None]]


def resolution(block: int) -> int:
    return 4 * 2 ** block


@dataclass(frozen=True)
class GeneratorSpec:
    depth: int = 5
    latent_dim: int = 512
    channels: tuple[int, ...] = ()
    leaky_slope: float = DEFAULT_LEAKY_SLOPE
    equalized_lr: bool = False

    def __post_init__(self):
        if not self.channels:
            if self.depth > len(FULL_SCHEDULE):
                raise ValueError(f"depth {self.depth} exceeds the {len(FULL_SCHEDULE)}-block schedule")
            object.__setattr__(self, "channels", FULL_SCHEDULE[:self.depth])
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if len(self.channels) != self.depth or min(self.channels) < 1:
            raise ValueError(f"channel schedule {self.channels} does not match depth {self.depth}")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")

    @property
    def output_resolution(self) -> int:
        return resolution(self.depth - 1)


@dataclass(frozen=True)
class DiscriminatorSpec:
    """Critic for a ``depth``-scale pyramid.

    ``channels`` is the generator's schedule (coarsest first). The critic block
    at scale ``k`` maps ``channels[k]`` (+3 RGB, +1 stddev) to ``channels[k]``
    then to ``channels[k-1]`` before pooling.
    """

    depth: int = 5
    channels: tuple[int, ...] = ()
    leaky_slope: float = DEFAULT_LEAKY_SLOPE
    mbstd_eps: float = MINIBATCH_STD_EPS
    equalized_lr: bool = False

    def __post_init__(self):
        if not self.channels:
            if self.depth > len(FULL_SCHEDULE):
                raise ValueError(f"depth {self.depth} exceeds the {len(FULL_SCHEDULE)}-block schedule")
            object.__setattr__(self, "channels", FULL_SCHEDULE[:self.depth])
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.depth < 1 or len(self.channels) != self.depth or min(self.channels) < 1:
            raise ValueError(f"channel schedule {self.channels} does not match depth {self.depth}")

    @property
    def entry_from_rgb_channels(self) -> int:
        return self.channels[-1]

    @classmethod
    def matching(cls, gen: GeneratorSpec, **kwargs) -> "DiscriminatorSpec":
        return cls(depth=gen.depth, channels=gen.channels, leaky_slope=gen.leaky_slope,
                   equalized_lr=gen.equalized_lr, **kwargs)


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------
def latent_normalize(z: Tensor) -> Tensor:
    """Scale every row onto the sphere of radius sqrt(d)."""
    if z.ndim != 2:
        raise ValueError(f"latent batch must be N x d, got {z.shape}")
    norms = np.sqrt((z.data.astype(np.float64) ** 2).sum(axis=1))
    if np.any(norms == 0):
        raise ValueError("latent rows must be nonzero")
    d = z.shape[1]
    return z * math.sqrt(d) / ((z * z).sum(axis=1, keepdims=True) ** 0.5)


def combine_phi_simple(features: Tensor, rgb: Tensor) -> Tensor:
    """Merge a raw RGB scale into the critic's feature maps (features first)."""
    return concat_channels(features, rgb)


class ConvTranspose4x4(Module):
    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, equalized: bool, dtype):
        self.in_ch, self.out_ch = in_ch, out_ch
        std = he_std(in_ch)
        self.scale = std if equalized else 1.0
        init = rng.standard_normal((in_ch, out_ch, 4, 4))
        self.weight = Parameter((init if equalized else init * std).astype(dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        w = self.weight if self.scale == 1.0 else self.weight * self.scale
        return conv2d_transposed_4x4(x, w, self.bias)

    def out_shape(self, shape):
        return (shape[0], self.out_ch, 4, 4)


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------
class GeneratorBlock(Module):
    def __init__(self, index: int, c_in: int, c_out: int, rng, slope, equalized, dtype):
        self.index = index
        self.slope = slope
        if index == 0:
            self.conv_a = ConvTranspose4x4(c_in, c_out, rng, equalized, dtype)
        else:
            self.conv_a = Conv2d(c_in, c_out, 3, rng, padding=1, equalized=equalized, dtype=dtype)
        self.conv_b = Conv2d(c_out, c_out, 3, rng, padding=1, equalized=equalized, dtype=dtype)
        self.to_rgb = Conv2d(c_out, 3, 1, rng, equalized=equalized, dtype=dtype, gain=1.0)

    def forward(self, x: Tensor, record: Recorder = None) -> tuple[Tensor, Tensor]:
        b = self.index + 1
        if self.index == 0:
            x = latent_normalize(x)
            x = x.reshape(x.shape[0], x.shape[1], 1, 1)
            _rec(record, b, "Latent vector", "Norm", x)
            x = leaky_relu(self.conv_a(x), self.slope)
            _rec(record, b, "Conv 4x4", "LReLU", x)
        else:
            x = upsample_nearest_2x(x)
            _rec(record, b, "Upsample", "-", x)
            x = leaky_relu(self.conv_a(x), self.slope)
            _rec(record, b, "Conv 3x3", "LReLU", x)
        x = leaky_relu(self.conv_b(x), self.slope)
        _rec(record, b, "Conv 3x3", "LReLU", x)
        rgb = self.to_rgb(x)
        _rec(record, b, "ToRGB", "-", rgb)
        return x, rgb

    def trace(self, shape) -> tuple[list, tuple]:
        b, rows = self.index + 1, []
        if self.index == 0:
            shape = (shape[0], shape[1], 1, 1)
            rows.append((b, "Latent vector", "Norm", shape))
            shape = self.conv_a.out_shape(shape)
            rows.append((b, "Conv 4x4", "LReLU", shape))
        else:
            shape = (shape[0], shape[1], shape[2] * 2, shape[3] * 2)
            rows.append((b, "Upsample", "-", shape))
            shape = self.conv_a.out_shape(shape)
            rows.append((b, "Conv 3x3", "LReLU", shape))
        shape = self.conv_b.out_shape(shape)
        rows.append((b, "Conv 3x3", "LReLU", shape))
        rows.append((b, "ToRGB", "-", self.to_rgb.out_shape(shape)))
        return rows, shape


class Generator(Module):
    def __init__(self, spec: GeneratorSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        ins = (spec.latent_dim,) + spec.channels[:-1]
        self.blocks = [
            GeneratorBlock(k, ins[k], spec.channels[k], rng, spec.leaky_slope, spec.equalized_lr, dtype)
            for k in range(spec.depth)
        ]

    def forward(self, z: Tensor, record: Recorder = None, return_features: bool = False):
        """Map latents (N x latent_dim) to an image pyramid, coarsest first."""
        if z.ndim != 2 or z.shape[1] != self.spec.latent_dim:
            raise ValueError(f"expected latents of shape N x {self.spec.latent_dim}, got {z.shape}")
        x, rgbs, feats = z, [], []
        for block in self.blocks:
            x, rgb = block(x, record)
            rgbs.append(rgb)
            feats.append(x)
        return (rgbs, feats) if return_features else rgbs

    def trace(self, batch: int = 1) -> list:
        shape, rows = (batch, self.spec.latent_dim), []
        for block in self.blocks:
            block_rows, shape = block.trace(shape)
            rows.extend(block_rows)
        return rows

    def sample_latents(self, n: int, rng: np.random.Generator) -> Tensor:
        return Tensor(rng.standard_normal((n, self.spec.latent_dim)).astype(self.dtype))


def build_generator(spec: GeneratorSpec, seed: int = 0, dtype=np.float32) -> Generator:
    return Generator(spec, seed, dtype)


# ---------------------------------------------------------------------------
# critic
# ---------------------------------------------------------------------------
class DiscriminatorBlock(Module):
    """Critic stage at generator scale ``scale`` (0 = 4x4)."""

    def __init__(self, scale: int, number: int, channels: Sequence[int], entry: bool,
                 rng, slope, eps, equalized, dtype):
        self.scale, self.number, self.entry = scale, number, entry
        self.slope, self.eps = slope, eps
        c_feat = channels[scale]
        c_out = channels[scale - 1] if scale > 0 else channels[0]
        if entry:
            self.from_rgb = Conv2d(3, c_feat, 1, rng, equalized=equalized, dtype=dtype)
            c_in = c_feat + 1
        else:
            c_in = c_feat + 3 + 1
        self.conv_a = Conv2d(c_in, c_feat, 3, rng, padding=1, equalized=equalized, dtype=dtype)
        if scale > 0:
            self.conv_b = Conv2d(c_feat, c_out, 3, rng, padding=1, equalized=equalized, dtype=dtype)
        else:
            self.conv_b = Conv2d(c_feat, c_out, 4, rng, equalized=equalized, dtype=dtype)
            self.fc = Dense(c_out, 1, rng, dtype=dtype, equalized=equalized)

    def forward(self, x: Optional[Tensor], rgb: Tensor, record: Recorder = None) -> Tensor:
        b = self.number
        _rec(record, b, f"Raw RGB images {b - 1}", "-", rgb)
        if self.entry:
            x = self.from_rgb(rgb)
            _rec(record, b, "FromRGB", "-", x)
        else:
            x = combine_phi_simple(x, rgb)
            _rec(record, b, "Concat/phi_simple", "-", x)
        x = minibatch_stddev(x, self.eps)
        _rec(record, b, "MiniBatchStd", "-", x)
        x = leaky_relu(self.conv_a(x), self.slope)
        _rec(record, b, "Conv 3x3", "LReLU", x)
        x = leaky_relu(self.conv_b(x), self.slope)
        if self.scale > 0:
            _rec(record, b, "Conv 3x3", "LReLU", x)
            x = avg_pool_2x2(x)
            _rec(record, b, "AvgPool", "-", x)
            return x
        _rec(record, b, "Conv 4x4", "LReLU", x)
        score = self.fc(x.reshape(x.shape[0], -1))
        _rec(record, b, "Fully Connected", "Linear", score.reshape(score.shape[0], 1, 1, 1))
        return score

    def trace(self, shape, rgb_shape) -> tuple[list, tuple]:
        b, rows = self.number, [(self.number, f"Raw RGB images {self.number - 1}", "-", rgb_shape)]
        if self.entry:
            shape = self.from_rgb.out_shape(rgb_shape)
            rows.append((b, "FromRGB", "-", shape))
        else:
            if shape[2:] != rgb_shape[2:]:
                raise ValueError(f"spatial mismatch {shape} vs {rgb_shape}")
            shape = (shape[0], shape[1] + rgb_shape[1]) + shape[2:]
            rows.append((b, "Concat/phi_simple", "-", shape))
        shape = (shape[0], shape[1] + 1) + shape[2:]
        rows.append((b, "MiniBatchStd", "-", shape))
        shape = self.conv_a.out_shape(shape)
        rows.append((b, "Conv 3x3", "LReLU", shape))
        shape = self.conv_b.out_shape(shape)
        if self.scale > 0:
            rows.append((b, "Conv 3x3", "LReLU", shape))
            shape = (shape[0], shape[1], shape[2] // 2, shape[3] // 2)
            rows.append((b, "AvgPool", "-", shape))
        else:
            rows.append((b, "Conv 4x4", "LReLU", shape))
            shape = (shape[0], self.fc.out_features, 1, 1)
            rows.append((b, "Fully Connected", "Linear", shape))
        return rows, shape


class Discriminator(Module):
    def __init__(self, spec: DiscriminatorSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        d = spec.depth
        # Blocks run finest to coarsest; numbering follows the 9-block table.
        self.blocks = [
            DiscriminatorBlock(k, 9 - k, spec.channels, k == d - 1, rng, spec.leaky_slope,
                               spec.mbstd_eps, spec.equalized_lr, dtype)
            for k in range(d - 1, -1, -1)
        ]

    def check_pyramid(self, pyramid: Sequence[Tensor]) -> None:
        if len(pyramid) != self.spec.depth:
            raise ValueError(f"pyramid has {len(pyramid)} scales, critic expects {self.spec.depth}")
        n = pyramid[0].shape[0]
        for k, img in enumerate(pyramid):
            r = resolution(k)
            if img.shape != (n, 3, r, r):
                raise ValueError(f"scale {k}: expected {(n, 3, r, r)}, got {img.shape}")

    def forward(self, pyramid: Sequence[Tensor], record: Recorder = None) -> Tensor:
        """Critic score (N x 1, unbounded) for a coarsest-first pyramid."""
        self.check_pyramid(pyramid)
        x = None
        for block in self.blocks:
            x = block(x, pyramid[block.scale], record)
        return x

    def trace(self, batch: int = 1) -> list:
        rows, shape = [], None
        for block in self.blocks:
            r = resolution(block.scale)
            block_rows, shape = block.trace(shape, (batch, 3, r, r))
            rows.extend(block_rows)
        return rows


def build_discriminator(spec: DiscriminatorSpec, seed: int = 0, dtype=np.float32) -> Discriminator:
    return Discriminator(spec, seed, dtype)


def _rec(record: Recorder, block: int, op: str, act: str, x: Tensor) -> None:
    if record is not None:
        record(block, op, act, tuple(x.shape))
