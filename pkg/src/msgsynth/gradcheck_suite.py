"""Finite-difference checks for every differentiable operation.

Each case is a scalar fp64 objective of a few small random arrays; the
analytic gradient from :func:`grad` is compared against central differences.
Objectives weight the op output by a fixed random tensor so that no gradient
entry is trivially constant.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autodiff import (
    Tensor,
    absolute,
    avg_pool_2x2,
    batch_norm_2d,
    check_grad,
    concat,
    concat_channels,
    conv2d,
    conv2d_transposed_4x4,
    dense,
    global_avg_pool,
    grad,
    leaky_relu,
    log_softmax,
    max_pool2d,
    minibatch_stddev,
    relative_error,
    relu,
    softmax,
    softmax_cross_entropy,
    upsample_nearest_2x,
)
from .gan_train import gradient_penalty
from .msggan import DiscriminatorSpec, GeneratorSpec, build_discriminator, latent_normalize

OP_TOLERANCE = 1e-6
PENALTY_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance

    def format(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<32} rel_err={self.error:.3e}  tol={self.tolerance:.0e}"


def _weighted(out: Tensor, seed: int = 99) -> Tensor:
    weights = np.random.default_rng(seed).standard_normal(out.shape)
    return (out * Tensor(weights)).sum()


def _positive(rng, *shape):
    return rng.uniform(0.5, 2.0, size=shape)


def op_cases(seed: int = 0) -> list[tuple[str, Callable, list[np.ndarray]]]:
    rng = np.random.default_rng(seed)
    n = rng.standard_normal
    labels = np.array([0, 1, 1])

    def bn_train(a):
        rm, rv = np.zeros(3), np.ones(3)
        return _weighted(batch_norm_2d(a[0], a[1], a[2], rm, rv, training=True))

    def bn_eval(a):
        rm, rv = np.array([0.1, -0.2, 0.3]), np.array([0.5, 1.5, 2.0])
        return _weighted(batch_norm_2d(a[0], a[1], a[2], rm, rv, training=False))

    def conv_double(a):
        x, w = a
        gx, = grad(_weighted(conv2d(x, w, padding=1) ** 2), [x], create_graph=True)
        return _weighted(gx, 5)

    def conv_weight_double(a):
        x, w = a
        gw, = grad(_weighted(conv2d(x, w, stride=2, padding=1) ** 2), [w], create_graph=True)
        return _weighted(gw, 6)

    return [
        ("add/broadcast", lambda a: _weighted(a[0] + a[1]), [n((3, 4)), n((4,))]),
        ("sub/broadcast", lambda a: _weighted(a[0] - a[1]), [n((2, 3, 4)), n((3, 1))]),
        ("mul/broadcast", lambda a: _weighted(a[0] * a[1]), [n((3, 4)), n((3, 1))]),
        ("div", lambda a: _weighted(a[0] / a[1]), [n((3, 4)), _positive(rng, 3, 4)]),
        ("neg", lambda a: _weighted(-a[0]), [n((5,))]),
        ("pow", lambda a: _weighted(a[0] ** 3 + a[1] ** 0.5), [n((4,)), _positive(rng, 4)]),
        ("exp", lambda a: _weighted(a[0].exp()), [n((3, 3))]),
        ("log", lambda a: _weighted(a[0].log()), [_positive(rng, 3, 3)]),
        ("sqrt", lambda a: _weighted(a[0].sqrt()), [_positive(rng, 6)]),
        ("sum/axis", lambda a: _weighted(a[0].sum(axis=1, keepdims=True)), [n((3, 4, 2))]),
        ("mean", lambda a: _weighted(a[0].mean(axis=(0, 2))), [n((3, 4, 2))]),
        ("reshape", lambda a: _weighted(a[0].reshape(6, 4)), [n((2, 3, 4))]),
        ("transpose", lambda a: _weighted(a[0].transpose(2, 0, 1)), [n((2, 3, 4))]),
        ("broadcast_to", lambda a: _weighted(a[0].broadcast_to((3, 2, 4))), [n((2, 1))]),
        ("matmul", lambda a: _weighted(a[0] @ a[1]), [n((3, 4)), n((4, 5))]),
        ("getitem/basic", lambda a: _weighted(a[0][1:, ::2]), [n((4, 5))]),
        ("getitem/fancy", lambda a: _weighted(a[0][np.array([0, 2, 2])]), [n((4, 3))]),
        ("concat", lambda a: _weighted(concat([a[0], a[1]], axis=1)), [n((2, 3)), n((2, 2))]),
        ("conv2d/pad1", lambda a: _weighted(conv2d(a[0], a[1], a[2], padding=1)),
         [n((2, 3, 5, 5)), n((4, 3, 3, 3)), n((4,))]),
        ("conv2d/stride2", lambda a: _weighted(conv2d(a[0], a[1], stride=2)),
         [n((2, 2, 7, 7)), n((3, 2, 3, 3))]),
        ("conv2d/1x1", lambda a: _weighted(conv2d(a[0], a[1], a[2])),
         [n((2, 4, 3, 3)), n((3, 4, 1, 1)), n((3,))]),
        ("conv2d/7x7-stride2", lambda a: _weighted(conv2d(a[0], a[1], stride=2, padding=3)),
         [n((1, 2, 9, 9)), n((2, 2, 7, 7))]),
        ("conv input-grad adjoint", conv_double, [n((2, 2, 4, 4)), n((3, 2, 3, 3))]),
        ("conv weight-grad adjoint", conv_weight_double, [n((2, 2, 5, 5)), n((3, 2, 3, 3))]),
        ("conv_transposed_4x4", lambda a: _weighted(conv2d_transposed_4x4(a[0], a[1], a[2])),
         [n((2, 5, 1, 1)), n((5, 3, 4, 4)), n((3,))]),
        ("leaky_relu", lambda a: _weighted(leaky_relu(a[0])), [n((4, 5))]),
        ("relu", lambda a: _weighted(relu(a[0])), [n((4, 5))]),
        ("absolute", lambda a: _weighted(absolute(a[0])), [n((4, 5))]),
        ("avg_pool_2x2", lambda a: _weighted(avg_pool_2x2(a[0])), [n((2, 3, 4, 6))]),
        ("upsample_nearest_2x", lambda a: _weighted(upsample_nearest_2x(a[0])), [n((2, 3, 2, 3))]),
        ("max_pool2d", lambda a: _weighted(max_pool2d(a[0], 3, 2, 1)), [n((2, 2, 6, 6))]),
        ("global_avg_pool", lambda a: _weighted(global_avg_pool(a[0])), [n((2, 3, 4, 4))]),
        ("concat_channels", lambda a: _weighted(concat_channels(a[0], a[1])),
         [n((2, 3, 4, 4)), n((2, 2, 4, 4))]),
        ("minibatch_stddev", lambda a: _weighted(minibatch_stddev(a[0])), [n((4, 3, 2, 2))]),
        ("dense", lambda a: _weighted(dense(a[0], a[1], a[2])), [n((3, 4)), n((4, 2)), n((2,))]),
        ("batch_norm/train", bn_train, [n((4, 3, 2, 2)), _positive(rng, 3), n((3,))]),
        ("batch_norm/eval", bn_eval, [n((2, 3, 2, 2)), _positive(rng, 3), n((3,))]),
        ("log_softmax", lambda a: _weighted(log_softmax(a[0])), [n((3, 4))]),
        ("softmax", lambda a: _weighted(softmax(a[0])), [n((3, 4))]),
        ("softmax_cross_entropy", lambda a: softmax_cross_entropy(a[0], labels), [n((3, 2))]),
        ("latent_normalize", lambda a: _weighted(latent_normalize(a[0])), [n((3, 5))]),
    ]


def _mlp_penalty_case(seed: int = 0):
    rng = np.random.default_rng(seed)
    real = [Tensor(rng.standard_normal((4, 3)))]
    fake = [Tensor(rng.standard_normal((4, 3)))]
    eps = rng.uniform(size=4)

    def objective(a):
        w1, b1, w2, b2 = a

        def critic(xs):
            return dense(leaky_relu(dense(xs[0], w1, b1)), w2, b2)

        return gradient_penalty(critic, real, fake, 10.0, eps=eps)

    params = [rng.standard_normal((3, 5)), rng.standard_normal(5) * 0.1,
              rng.standard_normal((5, 1)), rng.standard_normal(1)]
    return objective, params


def msg_critic_penalty_error(seed: int = 0, h: float = 1e-5) -> float:
    """Penalty gradient w.r.t. every parameter of a tiny fp64 multi-scale critic."""
    gen_spec = GeneratorSpec(depth=2, latent_dim=4, channels=(4, 4))
    critic = build_discriminator(DiscriminatorSpec.matching(gen_spec), seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    real = [Tensor(rng.standard_normal((4, 3, r, r))) for r in (4, 8)]
    fake = [Tensor(rng.standard_normal((4, 3, r, r))) for r in (4, 8)]
    eps = rng.uniform(size=4)

    def objective():
        return gradient_penalty(critic, real, fake, 10.0, eps=eps)

    params = critic.parameters()
    analytic = grad(objective(), params, allow_unused=True)
    errors = []
    for p, g in zip(params, analytic):
        num = np.zeros_like(p.data)
        flat, nflat = p.data.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = objective().item()
            flat[i] = orig - h
            down = objective().item()
            flat[i] = orig
            nflat[i] = (up - down) / (2 * h)
        errors.append(relative_error(g.data, num))
    return max(errors)


def run_suite(seed: int = 0, include_msg_critic: bool = True) -> list[CheckResult]:
    results = []
    for name, fn, arrays in op_cases(seed):
        t0 = time.perf_counter()
        err = check_grad(fn, arrays)
        results.append(CheckResult(name, err, OP_TOLERANCE, time.perf_counter() - t0))
    t0 = time.perf_counter()
    fn, params = _mlp_penalty_case(seed)
    results.append(CheckResult("gradient penalty (2-layer critic)", check_grad(fn, params, allow_unused=True),
                               PENALTY_TOLERANCE, time.perf_counter() - t0))
    if include_msg_critic:
        t0 = time.perf_counter()
        results.append(CheckResult("gradient penalty (multi-scale critic)",
                                   msg_critic_penalty_error(seed), PENALTY_TOLERANCE,
                                   time.perf_counter() - t0))
    return results


def format_results(results: Sequence[CheckResult]) -> str:
    return "\n".join(r.format() for r in results)
