"""Residual-network binary classifier and the freeze-and-replace-head transfer protocol."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import (
    Parameter,
    Tensor,
    global_avg_pool,
    grad,
    max_pool2d,
    no_grad,
    relu,
    softmax_cross_entropy,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import batch_iterator
from .nn import BatchNorm2d, Conv2d, Dense, Module

log = logging.getLogger(__name__)

DESK_WIDTHS = (16, 32, 64, 128)
FULL_WIDTHS = (64, 128, 256, 512)


@dataclass(frozen=True)
class MiniResNetSpec:
    """Four stages of two residual blocks (the 18-layer layout).

    ``stem="full"`` is the 7x7/2 conv plus 3x3/2 max-pool stem used at 224px;
    ``stem="desk"`` is a single 3x3/1 conv for small inputs.
    """

    widths: tuple[int, ...] = DESK_WIDTHS
    blocks_per_stage: int = 2
    num_classes: int = 2
    stem: str = "desk"

    def __post_init__(self):
        if len(self.widths) != 4 or min(self.widths) < 1:
            raise ValueError("widths must list four positive stage widths")
        if self.stem not in ("desk", "full"):
            raise ValueError("stem must be 'desk' or 'full'")

    @classmethod
    def full(cls) -> "MiniResNetSpec":
        return cls(widths=FULL_WIDTHS, stem="full")


@dataclass(frozen=True)
class TransferConfig:
    backbone: Optional[str] = None
    freeze_backbone: bool = True
    epochs: int = 150
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    input_size: int = 64
    seed: int = 0
    widths: tuple[int, ...] = DESK_WIDTHS
    stem: str = "desk"
    pretrain_epochs: int = 5

    @classmethod
    def full(cls, **kwargs) -> "TransferConfig":
        return cls(input_size=224, widths=FULL_WIDTHS, stem="full", **kwargs)

    def resnet_spec(self) -> MiniResNetSpec:
        return MiniResNetSpec(widths=self.widths, stem=self.stem)


class ResidualBlock(Module):
    """``relu(bn(conv(relu(bn(conv(x))))) + shortcut(x))``; the shortcut is a
    1x1 conv + BN whenever the channel count or stride changes."""

    def __init__(self, in_ch: int, out_ch: int, stride: int, rng, dtype=np.float32):
        self.in_ch, self.out_ch, self.stride = in_ch, out_ch, stride
        self.conv1 = Conv2d(in_ch, out_ch, 3, rng, stride=stride, padding=1, bias=False, dtype=dtype)
        self.bn1 = BatchNorm2d(out_ch, dtype=dtype)
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng, padding=1, bias=False, dtype=dtype)
        self.bn2 = BatchNorm2d(out_ch, dtype=dtype)
        self.projection = in_ch != out_ch or stride != 1
        if self.projection:
            self.short_conv = Conv2d(in_ch, out_ch, 1, rng, stride=stride, bias=False, dtype=dtype)
            self.short_bn = BatchNorm2d(out_ch, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_ch:
            raise ValueError(f"block expects {self.in_ch} channels, got {x.shape[1]}")
        out = self.bn2(self.conv2(relu(self.bn1(self.conv1(x)))))
        short = self.short_bn(self.short_conv(x)) if self.projection else x
        return relu(out + short)


def residual_block_forward(block: ResidualBlock, x: Tensor) -> Tensor:
    return block(x)


class MiniResNet(Module):
    def __init__(self, spec: MiniResNetSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.frozen_backbone = False
        rng = np.random.default_rng(seed)
        w = spec.widths
        if spec.stem == "full":
            self.stem_conv = Conv2d(3, w[0], 7, rng, stride=2, padding=3, bias=False, dtype=dtype)
        else:
            self.stem_conv = Conv2d(3, w[0], 3, rng, padding=1, bias=False, dtype=dtype)
        self.stem_bn = BatchNorm2d(w[0], dtype=dtype)
        blocks = []
        in_ch = w[0]
        for stage, width in enumerate(w):
            for i in range(spec.blocks_per_stage):
                stride = 2 if stage > 0 and i == 0 else 1
                blocks.append(ResidualBlock(in_ch, width, stride, rng, dtype))
                in_ch = width
        self.blocks = blocks
        self.fc = Dense(in_ch, spec.num_classes, rng, dtype=dtype)

    @property
    def feature_dim(self) -> int:
        return self.fc.in_features

    def backbone_modules(self) -> list[Module]:
        return [self.stem_conv, self.stem_bn, *self.blocks]

    def train(self, mode: bool = True) -> "MiniResNet":
        self.training = mode
        for m in self.backbone_modules():
            m.train(mode and not self.frozen_backbone)
        self.fc.train(mode)
        return self

    def features(self, x: Tensor) -> Tensor:
        x = relu(self.stem_bn(self.stem_conv(x)))
        if self.spec.stem == "full":
            x = max_pool2d(x, 3, 2, 1)
        for block in self.blocks:
            x = block(x)
        return global_avg_pool(x)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc(self.features(x))

    def backbone_arrays(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.state_arrays().items() if not k.startswith("fc.")}

    # -- checkpointing ------------------------------------------------------
    def save(self, directory, extra: dict | None = None):
        meta = {"kind": "classifier", "widths": ",".join(map(str, self.spec.widths)),
                "stem": self.spec.stem, "blocks_per_stage": self.spec.blocks_per_stage,
                "num_classes": self.spec.num_classes, "dtype": self.dtype.name,
                "frozen_backbone": self.frozen_backbone}
        meta.update(extra or {})
        return save_checkpoint(directory, meta, self.state_arrays())

    @classmethod
    def load(cls, directory) -> "MiniResNet":
        meta, arrays = load_checkpoint(directory)
        if meta.get("kind") != "classifier":
            raise CheckpointError(f"{directory} is not a classifier checkpoint")
        spec = MiniResNetSpec(widths=tuple(int(v) for v in meta["widths"].split(",")),
                              blocks_per_stage=int(meta["blocks_per_stage"]),
                              num_classes=int(meta["num_classes"]), stem=meta["stem"])
        net = cls(spec)
        net.load_state_arrays(arrays)
        if meta.get("frozen_backbone") == "True":
            for p in net.parameters():
                p.trainable = False
            for p in net.fc.parameters():
                p.trainable = True
            net.frozen_backbone = True
        return net


def build_classifier(spec: MiniResNetSpec, seed: int = 0, dtype=np.float32) -> MiniResNet:
    return MiniResNet(spec, seed, dtype)


def load_backbone(net: MiniResNet, directory) -> None:
    """Copy every non-head array from a classifier checkpoint into ``net``."""
    meta, arrays = load_checkpoint(directory)
    if meta.get("kind") != "classifier":
        raise CheckpointError(f"{directory} is not a classifier checkpoint")
    own = net.backbone_arrays()
    incoming = {k: v for k, v in arrays.items() if not k.startswith("fc.")}
    if set(incoming) != set(own):
        raise CheckpointError("backbone checkpoint does not match the network layout")
    for k, v in incoming.items():
        if v.shape != own[k].shape:
            raise CheckpointError(f"backbone array {k}: {v.shape} vs {own[k].shape}")
    net.load_state_arrays(incoming, strict=False)


def apply_transfer(net: MiniResNet, cfg: TransferConfig) -> MiniResNet:
    """Load the backbone (if any), freeze it on request and attach a fresh
    trainable two-class head."""
    if cfg.backbone:
        load_backbone(net, cfg.backbone)
    elif not cfg.freeze_backbone:
        return net
    if cfg.freeze_backbone:
        for p in net.parameters():
            p.trainable = False
        net.frozen_backbone = True
    rng = np.random.default_rng([cfg.seed, 7])
    net.fc = Dense(net.feature_dim, 2, rng, dtype=net.dtype)
    net.spec = MiniResNetSpec(widths=net.spec.widths, blocks_per_stage=net.spec.blocks_per_stage,
                              num_classes=2, stem=net.spec.stem)
    net.train(net.training)
    return net


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------
@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Parameter]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params: Sequence[Parameter], grads: Sequence, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update (advances ``state.t``)."""
    grads = [g.data if isinstance(g, Tensor) else np.asarray(g) for g in grads]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient; step aborted")
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = g


# ---------------------------------------------------------------------------
# training / inference
# ---------------------------------------------------------------------------
def _batched_features(net: MiniResNet, images: np.ndarray, batch_size: int) -> np.ndarray:
    out = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            out.append(net.features(Tensor(images[start:start + batch_size])).data)
    return np.concatenate(out) if out else np.zeros((0, net.feature_dim), dtype=net.dtype)


def train_classifier(net: MiniResNet, images: np.ndarray, labels: np.ndarray,
                     cfg: TransferConfig, epochs: int | None = None) -> tuple[MiniResNet, list[float]]:
    """Cross-entropy training with Adam; returns the per-epoch mean loss.

    With a frozen backbone (evaluated in inference mode) the features are
    fixed, so they are computed once and only the head sees the batches.
    """
    epochs = cfg.epochs if epochs is None else epochs
    images = images.astype(net.dtype, copy=False)
    labels = np.asarray(labels, dtype=np.int64)
    params = net.trainable_parameters()
    if not params:
        raise ValueError("network has no trainable parameters")
    state = AdamState.zeros_like(params)
    net.train()
    frozen = net.frozen_backbone
    feats = _batched_features(net, images, cfg.batch_size) if frozen else None
    curve = []
    index = np.arange(len(images))
    for epoch in range(epochs):
        total, count = 0.0, 0
        for batch in batch_iterator(index, cfg.batch_size, cfg.seed, epoch):
            if frozen:
                logits = net.fc(Tensor(feats[batch]))
            else:
                if len(batch) * images.shape[2] * images.shape[3] < 2:
                    continue
                logits = net(Tensor(images[batch]))
            loss = softmax_cross_entropy(logits, labels[batch])
            value = loss.item()
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            adam_step(params, grad(loss, params), state, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            total += value * len(batch)
            count += len(batch)
        curve.append(total / max(count, 1))
        log.debug("epoch %d loss %.6f", epoch, curve[-1])
    net.eval()
    return net, curve


def predict(net: MiniResNet, images: np.ndarray, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Inference-mode labels and class probabilities; ties go to the lower label."""
    was_training = net.training
    net.eval()
    logits = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            logits.append(net(Tensor(images[start:start + batch_size].astype(net.dtype, copy=False))).data)
    net.train(was_training)
    if not logits:
        return np.zeros(0, dtype=np.int64), np.zeros((0, net.spec.num_classes))
    return predict_from_logits(np.concatenate(logits))


def predict_from_logits(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=1, keepdims=True)
    return np.argmax(logits, axis=1).astype(np.int64), probs
