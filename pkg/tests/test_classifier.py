import math

import numpy as np
import pytest

from msgsynth.autodiff import Tensor, check_grad, relu
from msgsynth.checkpoint import CheckpointError
from msgsynth.classifier import (
    AdamState,
    MiniResNet,
    MiniResNetSpec,
    ResidualBlock,
    TransferConfig,
    adam_step,
    apply_transfer,
    build_classifier,
    predict,
    predict_from_logits,
    residual_block_forward,
    train_classifier,
)
from msgsynth.nn import Parameter

TINY = MiniResNetSpec(widths=(4, 4, 8, 8))


def _toy(n=16, size=8, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.array([0, 1] * (n // 2))
    images = np.where(labels[:, None, None, None] == 1, 0.5, -0.5) + rng.normal(0, 0.2, (n, 3, size, size))
    return images.astype(np.float32), labels


def _snapshot(net):
    return {k: v.copy() for k, v in net.state_arrays().items()}


# -- residual blocks ---------------------------------------------------------
def test_zero_residual_branch_is_relu():
    block = ResidualBlock(3, 3, 1, np.random.default_rng(0), np.float64)
    block.conv2.weight.data[:] = 0.0
    block.eval()
    x = Tensor(np.random.default_rng(1).standard_normal((2, 3, 5, 5)))
    np.testing.assert_array_equal(residual_block_forward(block, x).data, relu(x).data)
    assert not block.projection


def test_stride2_projection_halves_extent():
    block = ResidualBlock(3, 8, 2, np.random.default_rng(0))
    assert block.projection
    out = block(Tensor(np.zeros((1, 3, 32, 32), np.float32)))
    assert out.shape == (1, 8, 16, 16)
    with pytest.raises(ValueError):
        block(Tensor(np.zeros((1, 4, 32, 32), np.float32)))


def test_block_gradient_through_both_branches():
    rng = np.random.default_rng(2)
    block = ResidualBlock(2, 3, 2, rng, np.float64)
    weights = np.random.default_rng(3).standard_normal((2, 3, 2, 2))
    names = [n for n, _ in block.named_parameters()]
    params = block.parameters()

    def fn(arrays):
        x, *ps = arrays
        for p, t in zip(params, ps):
            p.data, p.requires_grad = t.data, True
        saved = dict(block.__dict__)
        for name, t in zip(names, ps):
            owner, attr = name.rsplit(".", 1)
            setattr(getattr(block, owner), attr, t)
        try:
            return (block(x) * Tensor(weights)).sum()
        finally:
            block.__dict__.update(saved)

    x = np.random.default_rng(4).standard_normal((2, 2, 4, 4))
    assert check_grad(fn, [x] + [p.data.copy() for p in params]) < 1e-5


# -- network -----------------------------------------------------------------
def test_desk_and_full_networks_emit_two_logits():
    desk = build_classifier(MiniResNetSpec(widths=(16, 32, 64, 128)), seed=0).eval()
    assert desk(Tensor(np.zeros((1, 3, 64, 64), np.float32))).shape == (1, 2)
    full = build_classifier(MiniResNetSpec.full(), seed=0).eval()
    assert full.spec.widths == (64, 128, 256, 512)
    assert full(Tensor(np.zeros((1, 3, 224, 224), np.float32))).shape == (1, 2)
    assert len(full.blocks) == 8


def test_frozen_trainable_count_is_head_only():
    cfg = TransferConfig(widths=(4, 4, 8, 8))
    net = apply_transfer(build_classifier(TINY, seed=0), cfg)
    trainable = net.trainable_parameters()
    assert sum(p.data.size for p in trainable) == 2 * net.feature_dim + 2
    assert all(p is q for p, q in zip(trainable, net.fc.parameters()))


def test_passthrough_without_backbone_or_freeze():
    net = build_classifier(TINY, seed=0)
    before = net.fc
    assert apply_transfer(net, TransferConfig(freeze_backbone=False)) is net
    assert net.fc is before
    assert len(net.trainable_parameters()) == len(net.parameters())


def test_training_under_freeze_moves_only_head():
    images, labels = _toy()
    cfg = TransferConfig(widths=(4, 4, 8, 8), input_size=8, batch_size=4)
    net = apply_transfer(build_classifier(TINY, seed=0), cfg)
    before = _snapshot(net)
    feats_before = net.eval().features(Tensor(images)).data.copy()
    train_classifier(net, images, labels, cfg, epochs=3)  # 12 optimizer steps
    after = _snapshot(net)
    for k in before:
        if k.startswith("fc."):
            assert not np.array_equal(before[k], after[k])
        else:
            assert np.array_equal(before[k], after[k]), k
    np.testing.assert_array_equal(net.features(Tensor(images)).data, feats_before)


def test_backbone_loading_and_incompatibility(tmp_path):
    source = build_classifier(TINY, seed=3)
    source.save(tmp_path / "bb")
    cfg = TransferConfig(backbone=str(tmp_path / "bb"), widths=(4, 4, 8, 8))
    net = apply_transfer(build_classifier(TINY, seed=0), cfg)
    np.testing.assert_array_equal(net.stem_conv.weight.data, source.stem_conv.weight.data)
    other = build_classifier(MiniResNetSpec(widths=(4, 4, 8, 16)), seed=0)
    with pytest.raises(CheckpointError):
        apply_transfer(other, TransferConfig(backbone=str(tmp_path / "bb")))


def test_save_load_restores_predictions_and_freeze(tmp_path):
    images, labels = _toy()
    cfg = TransferConfig(widths=(4, 4, 8, 8), input_size=8, batch_size=4)
    net = apply_transfer(build_classifier(TINY, seed=0), cfg)
    train_classifier(net, images, labels, cfg, epochs=1)
    net.save(tmp_path / "ck")
    back = MiniResNet.load(tmp_path / "ck")
    assert back.frozen_backbone and len(back.trainable_parameters()) == 2
    np.testing.assert_array_equal(predict(back, images)[1], predict(net, images)[1])


# -- optimizer ---------------------------------------------------------------
def test_adam_examples():
    p = Parameter(np.array([1.0]))
    state = AdamState.zeros_like([p])
    adam_step([p], [np.zeros(1)], state)
    assert p.data[0] == 1.0
    q = Parameter(np.array([1.0]))
    adam_step([q], [np.ones(1)], AdamState.zeros_like([q]), lr=1e-3)
    assert 1.0 - q.data[0] == pytest.approx(1e-3, rel=1e-6)
    with pytest.raises(FloatingPointError):
        adam_step([q], [np.array([np.inf])], AdamState.zeros_like([q]))


def test_adam_matches_scalar_oracle():
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    grads = [0.3, -1.2, 0.7]
    p = Parameter(np.array([0.25]))
    state = AdamState.zeros_like([p])
    theta, m, v = 0.25, 0.0, 0.0
    for t, g in enumerate(grads, 1):
        adam_step([p], [np.array([g])], state, lr, b1, b2, eps)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    assert abs(p.data[0] - theta) < 1e-12
    assert state.t == 3


# -- training ----------------------------------------------------------------
def test_zero_lr_gives_flat_curve_and_runs_are_deterministic():
    images, labels = _toy()
    cfg = TransferConfig(widths=(4, 4, 8, 8), input_size=8, batch_size=16, lr=0.0,
                         freeze_backbone=False)
    _, flat = train_classifier(build_classifier(TINY, seed=0).eval(), images, labels, cfg, epochs=3)
    # each epoch reshuffles the single batch, so only fp32 summation order differs
    np.testing.assert_allclose(flat, flat[0], rtol=1e-6)
    cfg = TransferConfig(widths=(4, 4, 8, 8), input_size=8, batch_size=4, freeze_backbone=False)
    _, a = train_classifier(build_classifier(TINY, seed=0), images, labels, cfg, epochs=2)
    _, b = train_classifier(build_classifier(TINY, seed=0), images, labels, cfg, epochs=2)
    assert a == b


def test_nonfinite_loss_is_reported():
    images, labels = _toy()
    images[0, 0, 0, 0] = np.nan
    cfg = TransferConfig(widths=(4, 4, 8, 8), input_size=8, batch_size=16, freeze_backbone=False)
    with pytest.raises(FloatingPointError):
        train_classifier(build_classifier(TINY, seed=0), images, labels, cfg, epochs=1)


# -- prediction --------------------------------------------------------------
def test_predict_from_logits_examples():
    labels, probs = predict_from_logits(np.array([[3.0, -3.0], [1.0, 1.0]]))
    assert labels.tolist() == [0, 0]
    assert probs[0, 0] == pytest.approx(0.9975274, abs=1e-7)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    rng = np.random.default_rng(0)
    z = rng.standard_normal((50, 2))
    base = predict_from_logits(z)[0]
    assert np.array_equal(predict_from_logits(z + 4.2)[0], base)
    assert np.array_equal(predict_from_logits(z * 3.5)[0], base)


def test_predict_is_batch_size_invariant():
    images, _ = _toy(6)
    net = build_classifier(TINY, seed=0)
    labels_all, probs_all = predict(net, images, batch_size=6)
    for i in range(6):
        _, alone = predict(net, images[i:i + 1], batch_size=1)
        np.testing.assert_allclose(alone[0], probs_all[i], atol=1e-6)
    np.testing.assert_allclose(predict(net, images, batch_size=4)[1], probs_all, atol=1e-6)
    assert predict(net, images[:0])[0].shape == (0,)
