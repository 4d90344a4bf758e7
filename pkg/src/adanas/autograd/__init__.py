from adanas.autograd.ops import (
    OP_KINDS,
    add,
    affine,
    conv2d,
    flatten,
    forward_op,
    global_average_pool,
    log_softmax,
    mean,
    mix,
    mul,
    relu,
    scalar_scale,
    softmax,
    total,
)
from adanas.autograd.optim import (
    SGD,
    OptimizerState,
    clip_global_norm,
    cosine_lr,
    global_norm,
    sgd_momentum_step,
)
from adanas.autograd.tensor import AutogradError, NumericError, ShapeError, TapeError, Tensor, backward

__all__ = [
    "OP_KINDS", "add", "affine", "conv2d", "flatten", "forward_op", "global_average_pool",
    "log_softmax", "mean", "mix", "mul", "relu", "scalar_scale", "softmax", "total",
    "SGD", "OptimizerState", "clip_global_norm", "cosine_lr", "global_norm", "sgd_momentum_step",
    "AutogradError", "NumericError", "ShapeError", "TapeError", "Tensor", "backward",
]
