from .tensor import (
    Function,
    Parameter,
    Tensor,
    broadcast_to,
    concat,
    enable_grad,
    grad,
    is_grad_enabled,
    no_grad,
    sum_to,
)
from .ops import (
    absolute,
    avg_pool_2x2,
    batch_norm_2d,
    concat_channels,
    conv2d,
    conv2d_transposed_4x4,
    dense,
    global_avg_pool,
    leaky_relu,
    log_softmax,
    max_pool2d,
    minibatch_stddev,
    relu,
    softmax,
    softmax_cross_entropy,
    upsample_nearest_2x,
)
from .gradcheck import check_grad, numerical_grad, relative_error

__all__ = [
    "Function", "Parameter", "Tensor", "broadcast_to", "concat", "enable_grad", "grad",
    "is_grad_enabled", "no_grad", "sum_to", "absolute", "avg_pool_2x2", "batch_norm_2d",
    "concat_channels", "conv2d", "conv2d_transposed_4x4", "dense", "global_avg_pool",
    "leaky_relu", "log_softmax", "max_pool2d", "minibatch_stddev", "relu", "softmax",
    "softmax_cross_entropy", "upsample_nearest_2x", "check_grad", "numerical_grad",
    "relative_error",
]
