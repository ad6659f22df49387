"""Numpy tensor core with automatic differentiation."""
from .tensor import (
    NonFiniteError,
    Parameter,
    Tensor,
    as_tensor,
    no_grad,
    record_branch,
    track_branches,
)
from .ops import (
    ConvSpec,
    RunningStats,
    batch_norm,
    concat,
    conv2d,
    conv3d,
    fold_depth,
    fully_connected,
    global_avg_pool_xy,
    l2_normalize,
    max_pool_xy,
    relu,
    sigmoid,
    signed_sqrt,
    softmax,
    unfold_depth,
)
from .module import (
    BatchNorm,
    Conv,
    Conv2Plus1D,
    Linear,
    MaxPoolXY,
    Module,
    conv2plus1d,
    trace_modules,
)
from .optim import SGD, MissingGradientError, SgdConfig, sgd_step
from .gradcheck import KinkError, grad_check, relative_error, sample_away_from_kinks
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint

__all__ = [
    "NonFiniteError",
    "Parameter",
    "Tensor",
    "as_tensor",
    "no_grad",
    "record_branch",
    "track_branches",
    "ConvSpec",
    "RunningStats",
    "batch_norm",
    "concat",
    "conv2d",
    "conv3d",
    "fold_depth",
    "fully_connected",
    "global_avg_pool_xy",
    "l2_normalize",
    "max_pool_xy",
    "relu",
    "sigmoid",
    "signed_sqrt",
    "softmax",
    "unfold_depth",
    "BatchNorm",
    "Conv",
    "Conv2Plus1D",
    "Linear",
    "MaxPoolXY",
    "Module",
    "conv2plus1d",
    "trace_modules",
    "SGD",
    "MissingGradientError",
    "SgdConfig",
    "sgd_step",
    "KinkError",
    "grad_check",
    "relative_error",
    "sample_away_from_kinks",
    "load_checkpoint",
    "read_checkpoint",
    "save_checkpoint",
]
