"""Network primitives built on :mod:`msgsynth.autodiff.tensor`.

Convolution is implemented as three mutually-adjoint functions (forward,
input-gradient, weight-gradient); each one's backward is expressed through the
other two, so convolutions support arbitrary-order differentiation.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Function, Tensor, check_same_dtype, concat, no_grad

DEFAULT_LEAKY_SLOPE = 0.2
MINIBATCH_STD_EPS = 1e-8


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------
def _conv_out_extent(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """(N, C, Ho, Wo, kh, kw) view of the padded input."""
    win = sliding_window_view(_pad(x, padding), (kh, kw), axis=(2, 3))
    if stride > 1:
        win = win[:, :, ::stride, ::stride]
    return win


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Patch matrix of shape (C * kh * kw, N * Ho * Wo), channel-major rows."""
    n, c, h, w = x.shape
    ho = _conv_out_extent(h, kh, stride, padding)
    wo = _conv_out_extent(w, kw, stride, padding)
    xp = _pad(x, padding).transpose(1, 0, 2, 3)
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]
    return cols.reshape(c * kh * kw, n * ho * wo)


def _col2im(cols: np.ndarray, in_shape, kh: int, kw: int, ho: int, wo: int,
            stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back to an NCHW array."""
    n, c, h, w = in_shape
    cols = cols.reshape(c, kh, kw, n, ho, wo)
    gx = np.zeros((c, n, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += cols[:, i, j]
    if padding:
        gx = gx[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(gx.transpose(1, 0, 2, 3))


def _flat_channels(g: np.ndarray) -> np.ndarray:
    """(N, O, Ho, Wo) -> (O, N * Ho * Wo)."""
    return g.transpose(1, 0, 2, 3).reshape(g.shape[1], -1)


def _conv_forward(x, w, stride, padding):
    n, _, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = _conv_out_extent(h, kh, stride, padding)
    wo = _conv_out_extent(wd, kw, stride, padding)
    out = w.reshape(o, -1) @ _im2col(x, kh, kw, stride, padding)
    return np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))


def _conv_input_grad(g, w, in_shape, stride, padding):
    o, _, kh, kw = w.shape
    cols = w.reshape(o, -1).T @ _flat_channels(g)
    return _col2im(cols, in_shape, kh, kw, g.shape[2], g.shape[3], stride, padding)


def _conv_weight_grad(x, g, w_shape, stride, padding):
    cols = _im2col(x, w_shape[2], w_shape[3], stride, padding)
    return (_flat_channels(g) @ cols.T).reshape(w_shape)


class Conv2d(Function):
    def forward(self, x, w, stride, padding):
        self.stride, self.padding = stride, padding
        return _conv_forward(x, w, stride, padding)

    def backward(self, g, needs):
        x, w = self.parents
        gx = ConvInputGrad.apply(g, w, in_shape=x.shape, stride=self.stride,
                                 padding=self.padding) if needs[0] else None
        gw = ConvWeightGrad.apply(x, g, w_shape=w.shape, stride=self.stride,
                                  padding=self.padding) if needs[1] else None
        return gx, gw


class ConvInputGrad(Function):
    """Adjoint of conv2d in its input: ``(g, w) -> dL/dx``."""

    def forward(self, g, w, in_shape, stride, padding):
        self.stride, self.padding = stride, padding
        return _conv_input_grad(g, w, in_shape, stride, padding)

    def backward(self, h, needs):
        g, w = self.parents
        gg = Conv2d.apply(h, w, stride=self.stride, padding=self.padding) if needs[0] else None
        gw = ConvWeightGrad.apply(h, g, w_shape=w.shape, stride=self.stride,
                                  padding=self.padding) if needs[1] else None
        return gg, gw


class ConvWeightGrad(Function):
    """Adjoint of conv2d in its weight: ``(x, g) -> dL/dw``."""

    def forward(self, x, g, w_shape, stride, padding):
        self.stride, self.padding = stride, padding
        return _conv_weight_grad(x, g, w_shape, stride, padding)

    def backward(self, hw, needs):
        x, g = self.parents
        gx = ConvInputGrad.apply(g, hw, in_shape=x.shape, stride=self.stride,
                                 padding=self.padding) if needs[0] else None
        gg = Conv2d.apply(x, hw, stride=self.stride, padding=self.padding) if needs[1] else None
        return gx, gg


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an NCHW input with an O x I x kH x kW kernel."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, weight expects {weight.shape[1]}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} / padding={padding}")
    ho = _conv_out_extent(x.shape[2], weight.shape[2], stride, padding)
    wo = _conv_out_extent(x.shape[3], weight.shape[3], stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"non-positive output extent {ho}x{wo} for input {x.shape} and kernel {weight.shape}")
    check_same_dtype(x, weight)
    out = Conv2d.apply(x, weight, stride=stride, padding=padding)
    if bias is not None:
        out = out + bias.reshape(1, -1, 1, 1)
    return out


def conv2d_output_shape(in_shape, out_channels: int, k: int, stride: int = 1, padding: int = 0):
    n, _, h, w = in_shape
    return (n, out_channels, _conv_out_extent(h, k, stride, padding), _conv_out_extent(w, k, stride, padding))


def conv2d_transposed_4x4(latent_map: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Transposed 4x4 convolution of a 1x1 map (stride 1, no padding).

    ``weight`` is laid out C_in x C_out x 4 x 4; output pixel (i, j) of channel
    o is ``sum_c z[c] * weight[c, o, i, j] + bias[o]``.
    """
    n, c, h, w = latent_map.shape
    if (h, w) != (1, 1):
        raise ValueError(f"conv2d_transposed_4x4 needs a 1x1 spatial input, got {h}x{w}")
    if weight.shape[0] != c or weight.shape[2:] != (4, 4):
        raise ValueError(f"weight {weight.shape} incompatible with input channels {c}")
    c_out = weight.shape[1]
    out = (latent_map.reshape(n, c) @ weight.reshape(c, c_out * 16)).reshape(n, c_out, 4, 4)
    if bias is not None:
        out = out + bias.reshape(1, c_out, 1, 1)
    return out


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------
def _mask(x: Tensor, neg_value: float) -> Tensor:
    # Kink at 0 takes the right derivative.
    return Tensor(np.where(x.data >= 0, 1.0, neg_value).astype(x.dtype))


def leaky_relu(x: Tensor, slope: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must lie in (0, 1), got {slope}")
    return x * _mask(x, slope)


def relu(x: Tensor) -> Tensor:
    return x * _mask(x, 0.0)


def absolute(x: Tensor) -> Tensor:
    return x * _mask(x, -1.0)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------
def avg_pool_2x2(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool_2x2 needs even spatial extents, got {h}x{w}")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def upsample_nearest_2x(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    tiled = x.reshape(n, c, h, 1, w, 1).broadcast_to((n, c, h, 2, w, 2))
    return tiled.reshape(n, c, 2 * h, 2 * w)


class _MaxPoolGather(Function):
    """Read values at fixed flat positions of each padded plane."""

    def forward(self, x, flat_idx, out_shape, padding, pad_shape):
        self.flat_idx, self.padding, self.pad_shape = flat_idx, padding, pad_shape
        self.in_shape = x.shape
        n, c = x.shape[:2]
        planes = _pad(x, padding).reshape(n, c, -1)
        return np.take_along_axis(planes, flat_idx.reshape(n, c, -1), axis=2).reshape(out_shape)

    def backward(self, g, needs):
        return (_MaxPoolScatter.apply(g, flat_idx=self.flat_idx, in_shape=self.in_shape,
                                      padding=self.padding, pad_shape=self.pad_shape),)


class _MaxPoolScatter(Function):
    def forward(self, g, flat_idx, in_shape, padding, pad_shape):
        self.flat_idx, self.padding, self.pad_shape = flat_idx, padding, pad_shape
        self.out_shape = g.shape
        n, c = in_shape[:2]
        planes = np.zeros((n * c, pad_shape[0] * pad_shape[1]), dtype=g.dtype)
        rows = np.repeat(np.arange(n * c), g.shape[2] * g.shape[3])
        np.add.at(planes, (rows, flat_idx.reshape(-1)), g.reshape(-1))
        gx = planes.reshape(n, c, *pad_shape)
        if padding:
            gx = gx[:, :, padding:-padding, padding:-padding]
        return np.ascontiguousarray(gx)

    def backward(self, h, needs):
        return (_MaxPoolGather.apply(h, flat_idx=self.flat_idx, out_shape=self.out_shape,
                                     padding=self.padding, pad_shape=self.pad_shape),)


def max_pool2d(x: Tensor, kernel: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    n, c, h, w = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                constant_values=-np.inf) if padding else x.data
    win = _windows(xp, kernel, kernel, stride, 0)
    ho, wo = win.shape[2], win.shape[3]
    arg = win.reshape(n, c, ho, wo, kernel * kernel).argmax(axis=-1)
    ki, kj = np.divmod(arg, kernel)
    rows = np.arange(ho)[:, None] * stride + ki
    cols = np.arange(wo)[None, :] * stride + kj
    pad_shape = (h + 2 * padding, w + 2 * padding)
    flat_idx = rows * pad_shape[1] + cols
    return _MaxPoolGather.apply(x, flat_idx=flat_idx, out_shape=(n, c, ho, wo),
                                padding=padding, pad_shape=pad_shape)


def global_avg_pool(x: Tensor) -> Tensor:
    return x.mean(axis=(2, 3))


# ---------------------------------------------------------------------------
# structural
# ---------------------------------------------------------------------------
def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 4 or b.ndim != 4:
        raise ValueError("concat_channels expects NCHW tensors")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ValueError(f"batch/spatial mismatch: {a.shape} vs {b.shape}")
    return concat([a, b], axis=1)


def minibatch_stddev(x: Tensor, eps: float = MINIBATCH_STD_EPS) -> Tensor:
    """Append the batch-wide mean standard deviation as one extra channel.

    One group spans the whole batch; the variance is the population variance.
    """
    n, c, h, w = x.shape
    centered = x - x.mean(axis=0, keepdims=True)
    std = ((centered * centered).mean(axis=0) + eps) ** 0.5
    stat = std.mean().reshape(1, 1, 1, 1).broadcast_to((n, 1, h, w))
    return concat([x, stat], axis=1)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"dense dimension mismatch: {x.shape} x {weight.shape}")
    out = x @ weight
    if bias is not None:
        out = out + bias.reshape(1, -1)
    return out


def batch_norm_2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                  running_var: np.ndarray, training: bool, momentum: float = 0.1,
                  eps: float = 1e-5) -> Tensor:
    """Per-channel normalization. In training mode the running statistics are
    updated in place (unbiased variance, as is customary)."""
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"gamma/beta must have shape ({c},)")
    if training:
        count = n * h * w
        if count < 2:
            raise ValueError("batch_norm_2d in training mode needs N*H*W >= 2")
        mean = x.mean(axis=(0, 2, 3), keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
        with no_grad():
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean.data.reshape(c)
            running_var *= 1.0 - momentum
            running_var += momentum * var.data.reshape(c) * (count / (count - 1))
        xhat = centered / (var + eps) ** 0.5
    else:
        rm = Tensor(running_mean.reshape(1, c, 1, 1).astype(x.dtype))
        rv = Tensor(running_var.reshape(1, c, 1, 1).astype(x.dtype))
        xhat = (x - rm) / (rv + eps) ** 0.5
    return xhat * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1)


def log_softmax(logits: Tensor) -> Tensor:
    shifted = logits - Tensor(logits.data.max(axis=1, keepdims=True))
    return shifted - shifted.exp().sum(axis=1, keepdims=True).log()


def softmax(logits: Tensor) -> Tensor:
    return log_softmax(logits).exp()


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    onehot = np.zeros((n, k), dtype=logits.dtype)
    onehot[np.arange(n), labels] = 1.0
    return -(log_softmax(logits) * Tensor(onehot)).sum() * (1.0 / n)
