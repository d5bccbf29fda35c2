import csv
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from msgsynth.autodiff import Tensor, dense
from msgsynth.checkpoint import CheckpointError
from msgsynth.data import build_pyramid
from msgsynth.gan_train import (
    GanTrainingConfig,
    NonFiniteError,
    TrainState,
    emit_sample_grid,
    gradient_penalty,
    grid_image,
    rmsprop_step,
    train_gan,
    train_step,
    wgan_losses,
)
from msgsynth.msggan import GeneratorSpec, build_generator
from msgsynth.nn import Parameter

TINY = GeneratorSpec(depth=2, latent_dim=8, channels=(8, 8))


def _images(n=16, seed=0):
    rng = np.random.default_rng(seed)
    return np.clip(rng.normal(0.2, 0.3, (n, 3, 8, 8)), -1, 1).astype(np.float32)


def _states_equal(a: TrainState, b: TrainState) -> bool:
    arr_a, arr_b = a.arrays(), b.arrays()
    return (a.step == b.step and arr_a.keys() == arr_b.keys()
            and all(np.array_equal(arr_a[k], arr_b[k]) for k in arr_a)
            and a.rng.bit_generator.state == b.rng.bit_generator.state)


# -- gradient penalty --------------------------------------------------------
def test_unit_norm_linear_critic_has_zero_penalty():
    rng = np.random.default_rng(0)
    real = [Tensor(rng.standard_normal((5, 3, 4, 4))), Tensor(rng.standard_normal((5, 3, 8, 8)))]
    fake = [Tensor(rng.standard_normal(r.shape)) for r in real]
    w = [rng.standard_normal(r.shape[1:]) for r in real]
    norm = math.sqrt(sum((v ** 2).sum() for v in w))
    w = [Tensor(v / norm) for v in w]

    def critic(xs):
        return sum((x * wi).reshape(x.shape[0], -1).sum(axis=1, keepdims=True) for x, wi in zip(xs, w))

    assert abs(gradient_penalty(critic, real, fake, 10.0, rng).item()) < 1e-10


def test_constant_gradient_critic_penalty_is_lambda():
    real, fake = [Tensor(np.array([[0.3], [1.2]]))], [Tensor(np.array([[-0.5], [2.0]]))]
    gp = gradient_penalty(lambda xs: xs[0] * 2.0, real, fake, 10.0, np.random.default_rng(0))
    assert gp.item() == pytest.approx(10.0, abs=1e-9)


def test_penalty_errors():
    a = [Tensor(np.zeros((2, 1)))]
    with pytest.raises(ValueError):
        gradient_penalty(lambda xs: xs[0], a, a + a, 10.0)
    with pytest.raises(ValueError):
        gradient_penalty(lambda xs: xs[0], a, [Tensor(np.zeros((3, 1)))], 10.0)
    with pytest.raises(ValueError):
        gradient_penalty(lambda xs: xs[0], a, a, -1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 20.0))
def test_penalty_is_nonnegative(seed, lam):
    rng = np.random.default_rng(seed)
    w1, w2 = Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal((4, 1)))
    real, fake = [Tensor(rng.standard_normal((4, 3)))], [Tensor(rng.standard_normal((4, 3)))]
    gp = gradient_penalty(lambda xs: dense(dense(xs[0], w1).exp(), w2), real, fake, lam, rng)
    assert gp.item() >= 0


# -- losses ------------------------------------------------------------------
def test_wgan_loss_examples():
    d_loss, g_loss = wgan_losses(Tensor(np.array([[1.0]])), Tensor(np.array([[0.2]])), 0.0)
    assert d_loss.item() == pytest.approx(-0.8)
    assert g_loss.item() == pytest.approx(-0.2)
    same = Tensor(np.array([[0.7], [-0.1]]))
    assert wgan_losses(same, same, 0.0)[0].item() == 0.0
    with pytest.raises(ValueError):
        wgan_losses(Tensor(np.zeros((2, 1))), Tensor(np.zeros((3, 1))), 0.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.floats(0.1, 10), st.floats(-5, 5))
def test_wasserstein_terms_are_linear(real, fake, c, shift):
    r, f = np.array(real)[:, None], np.array(fake)[:, None]
    base = wgan_losses(Tensor(r), Tensor(f), 0.0)[0].item()
    scaled = wgan_losses(Tensor(c * r), Tensor(c * f), 0.0)[0].item()
    assert scaled == pytest.approx(c * base, abs=1e-9)
    shifted = wgan_losses(Tensor(r + shift), Tensor(f + shift), 0.0)[0].item()
    assert shifted == pytest.approx(base, abs=1e-9)


# -- optimizer ---------------------------------------------------------------
def test_rmsprop_single_step_example():
    p = Parameter(np.array([0.0]))
    cache = [np.zeros(1)]
    rmsprop_step([p], [np.array([1.0])], cache, lr=0.01, alpha=0.9, eps=0.0)
    assert cache[0][0] == pytest.approx(0.1)
    assert p.data[0] == pytest.approx(-0.031623, abs=1e-6)


def test_rmsprop_matches_scalar_oracle():
    lr, alpha, eps, g = 0.05, 0.9, 1e-8, 0.7
    p = Parameter(np.array([1.5]))
    cache = [np.zeros(1)]
    theta, c = 1.5, 0.0
    for _ in range(2):
        rmsprop_step([p], [np.array([g])], cache, lr, alpha, eps)
        c = alpha * c + (1 - alpha) * g * g
        theta = theta - lr * g / (math.sqrt(c) + eps)
    assert abs(p.data[0] - theta) < 1e-12
    assert abs(cache[0][0] - c) < 1e-12


def test_rmsprop_zero_gradient_and_nonfinite():
    p = Parameter(np.array([0.5, -0.5]))
    cache = [np.zeros(2)]
    rmsprop_step([p], [np.zeros(2)], cache, lr=0.1)
    np.testing.assert_array_equal(p.data, [0.5, -0.5])
    q = Parameter(np.array([1.0]))
    with pytest.raises(NonFiniteError):
        rmsprop_step([p, q], [np.zeros(2), np.array([np.nan])], [np.zeros(2), np.zeros(1)], lr=0.1)
    np.testing.assert_array_equal(p.data, [0.5, -0.5])
    np.testing.assert_array_equal(q.data, [1.0])


def test_config_validation():
    with pytest.raises(ValueError):
        GanTrainingConfig(critic_iters=0)
    with pytest.raises(ValueError):
        GanTrainingConfig(rmsprop_decay=1.0)
    with pytest.raises(ValueError):
        GanTrainingConfig(learning_rate=-1.0)


# -- training ----------------------------------------------------------------
def test_training_is_deterministic():
    cfg = GanTrainingConfig(batch_size=4)
    a, b = TrainState.create(TINY, seed=3), TrainState.create(TINY, seed=3)
    ha = train_gan(a, _images(), cfg, steps=3)
    hb = train_gan(b, _images(), cfg, steps=3)
    assert ha == hb
    assert _states_equal(a, b)
    assert all(v >= 0 for c in a.d_cache + a.g_cache for v in c.ravel())


def test_zero_learning_rate_leaves_parameters():
    state = TrainState.create(TINY, seed=0)
    before = {k: v.copy() for k, v in state.arrays().items() if not k.startswith("rmsprop")}
    tele = train_step(state, build_pyramid(_images(4), 2), GanTrainingConfig(learning_rate=0.0, critic_iters=2))
    after = state.arrays()
    assert all(np.array_equal(before[k], after[k]) for k in before)
    for key in ("d_loss", "g_loss", "gp", "d_grad_norm", "g_grad_norm"):
        assert math.isfinite(tele[key])
    assert state.step == 1


def test_training_rejects_wrong_depth_and_nan_data():
    state = TrainState.create(TINY, seed=0)
    with pytest.raises(ValueError):
        train_step(state, build_pyramid(_images(4), 1), GanTrainingConfig())
    bad = _images(4)
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(NonFiniteError) as info:
        train_step(state, build_pyramid(bad, 2), GanTrainingConfig())
    assert info.value.snapshot["step"] == 0


def test_telemetry_csv(tmp_path):
    state = TrainState.create(TINY, seed=0)
    cfg = GanTrainingConfig(batch_size=4, sample_every=2, checkpoint_every=2)
    hist = train_gan(state, _images(), cfg, steps=4, out_dir=tmp_path)
    with (tmp_path / "telemetry.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "d_loss", "g_loss", "gp"]
    assert [int(r[0]) for r in rows[1:]] == [1, 2, 3, 4]
    assert float(rows[-1][1]) == hist[-1]["d_loss"]
    assert sorted(p.name for p in (tmp_path / "samples").iterdir()) == ["step_0000002.png", "step_0000004.png"]
    train_gan(state, _images(), cfg, steps=1, out_dir=tmp_path)
    with (tmp_path / "telemetry.csv").open() as fh:
        assert len(list(csv.reader(fh))) == 6


# -- checkpoints -------------------------------------------------------------
def _tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_save_load_save_is_byte_identical(tmp_path):
    state = TrainState.create(TINY, seed=1)
    train_gan(state, _images(), GanTrainingConfig(batch_size=4), steps=2)
    state.save(tmp_path / "a")
    TrainState.from_checkpoint(tmp_path / "a").save(tmp_path / "b")
    assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")


def test_mismatched_spec_fails_without_partial_load(tmp_path):
    TrainState.create(TINY, seed=1).save(tmp_path / "ck")
    other = TrainState.create(GeneratorSpec(depth=2, latent_dim=8, channels=(8, 4)), seed=2)
    before = {k: v.copy() for k, v in other.arrays().items()}
    with pytest.raises(CheckpointError):
        other.load(tmp_path / "ck")
    after = other.arrays()
    assert all(np.array_equal(before[k], after[k]) for k in before)
    assert other.step == 0


def test_corrupted_array_is_rejected(tmp_path):
    state = TrainState.create(TINY, seed=1)
    state.save(tmp_path / "ck")
    victim = sorted((tmp_path / "ck" / "arrays").iterdir())[0]
    victim.write_bytes(victim.read_bytes()[:-4])
    with pytest.raises(CheckpointError, match="corrupted"):
        TrainState.create(TINY, seed=1).load(tmp_path / "ck")


def test_resume_matches_uninterrupted_run(tmp_path):
    cfg = GanTrainingConfig(batch_size=4)
    images = _images(12)
    straight = TrainState.create(TINY, seed=4)
    train_gan(straight, images, cfg, steps=3)
    straight.save(tmp_path / "mid")
    train_gan(straight, images, cfg, steps=10)
    resumed = TrainState.from_checkpoint(tmp_path / "mid")
    train_gan(resumed, images, cfg, steps=10)
    assert _states_equal(straight, resumed)


# -- sample grids ------------------------------------------------------------
def test_sample_grid_size_and_determinism(tmp_path):
    gen = build_generator(GeneratorSpec(depth=5, latent_dim=8, channels=(4, 4, 4, 4, 4)), seed=0)
    a = emit_sample_grid(gen, 4, 4, seed=7, path=tmp_path / "a.png")
    b = emit_sample_grid(gen, 4, 4, seed=7, path=tmp_path / "b.png")
    with Image.open(a) as img:
        assert img.size == (256, 256) and img.mode == "RGB"
    assert a.read_bytes() == b.read_bytes()


def test_grid_mapping_endpoints():
    assert not grid_image(-np.ones((4, 3, 2, 2)), 2, 2).any()
    assert (grid_image(np.ones((1, 3, 2, 2)), 1, 1) == 255).all()
    assert (grid_image(np.full((1, 3, 2, 2), -7.0), 1, 1) == 0).all()
    with pytest.raises(ValueError):
        grid_image(np.zeros((3, 3, 2, 2)), 2, 2)


def test_unwritable_grid_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    gen = build_generator(TINY, seed=0)
    with pytest.raises(OSError):
        emit_sample_grid(gen, 1, 1, 0, blocker / "grid.png")
    assert os.path.isfile(blocker)
