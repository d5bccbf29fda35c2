"""Central finite-difference checking of :func:`grad`."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, grad


def numerical_grad(fn: Callable[[Sequence[Tensor]], Tensor], arrays: Sequence[np.ndarray],
                   h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of the scalar ``fn`` w.r.t. every entry of ``arrays``."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn([Tensor(a, requires_grad=True) for a in arrays]).item()
            flat[i] = orig - h
            down = fn([Tensor(a, requires_grad=True) for a in arrays]).item()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def check_grad(fn: Callable[[Sequence[Tensor]], Tensor], arrays: Sequence[np.ndarray],
               h: float = 1e-5, allow_unused: bool = False) -> float:
    """Largest relative error between analytic and numeric gradients over all inputs."""
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    analytic = grad(fn(leaves), leaves, allow_unused=allow_unused)
    numeric = numerical_grad(fn, arrays, h)
    return max(relative_error(a.data, n) for a, n in zip(analytic, numeric))
