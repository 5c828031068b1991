from tensor.core import (
    Parameter,
    Tensor,
    backward,
    default_dtype,
    get_default_dtype,
    no_grad,
    set_default_dtype,
)
from tensor.ops import (
    add,
    batch_norm2d,
    broadcast_to,
    concat,
    conv2d,
    depthwise_conv2d_per_sample,
    flatten,
    global_avg_pool,
    linear,
    max_pool2d,
    mul,
    relu,
    reshape,
    softmax_cross_entropy,
    softmax_np,
    sub,
    swap_axes,
    transpose,
)
from tensor.optim import Optimizer, OptimizerState, adam_step, cosine_lr, sgd_momentum_step

__all__ = [
    "Parameter", "Tensor", "backward", "default_dtype", "get_default_dtype", "no_grad", "set_default_dtype",
    "add", "batch_norm2d", "broadcast_to", "concat", "conv2d", "depthwise_conv2d_per_sample", "flatten",
    "global_avg_pool", "linear", "max_pool2d", "mul", "relu", "reshape", "softmax_cross_entropy",
    "softmax_np", "sub", "swap_axes", "transpose",
    "Optimizer", "OptimizerState", "adam_step", "cosine_lr", "sgd_momentum_step",
]
