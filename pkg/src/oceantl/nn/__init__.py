"""Dense-tensor kernels with hand-derived backward passes.

The network is a fixed chain, so instead of a general autodiff graph each
operation comes as an fwd/bwd pair: forward returns the output plus an
opaque context, backward consumes the context and the upstream gradient.
Kernels compute in the dtype of their inputs; float32 is the training
default and float64 is used by the gradient-check tests.
"""

from .ops import (
    batchnorm_bwd,
    batchnorm_fwd,
    conv2d_bwd,
    conv2d_fwd,
    conv2d_transpose_bwd,
    conv2d_transpose_fwd,
    dense_bwd,
    dense_fwd,
    leaky_relu_bwd,
    leaky_relu_fwd,
    maxpool2_bwd,
    maxpool2_fwd,
    upsample2_bwd,
    upsample2_fwd,
)
from .optim import (
    LrSchedule,
    OptimizerState,
    adamw_step,
    cosine_warm_restart_lr,
)

__all__ = [
    "LrSchedule",
    "OptimizerState",
    "adamw_step",
    "batchnorm_bwd",
    "batchnorm_fwd",
    "conv2d_bwd",
    "conv2d_fwd",
    "conv2d_transpose_bwd",
    "conv2d_transpose_fwd",
    "cosine_warm_restart_lr",
    "dense_bwd",
    "dense_fwd",
    "leaky_relu_bwd",
    "leaky_relu_fwd",
    "maxpool2_bwd",
    "maxpool2_fwd",
    "upsample2_bwd",
    "upsample2_fwd",
]
