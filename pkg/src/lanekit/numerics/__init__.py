from .tensor import (
    ShapeError,
    Tensor,
    tensor,
    parameter,
    evaluate,
    gradients,
    concat,
    gather,
    minimum,
    maximum,
    conv2d,
    bilinear_sample,
)
from .optim import WarmupCosineSchedule, OptimState, adamw_step
from .gradcheck import GradCheckReport, NonFiniteError, grad_check
from .checkpoint import CheckpointError, save_checkpoint, load_checkpoint

__all__ = [
    "ShapeError", "Tensor", "tensor", "parameter", "evaluate", "gradients",
    "concat", "gather", "minimum", "maximum", "conv2d", "bilinear_sample",
    "WarmupCosineSchedule", "OptimState", "adamw_step",
    "GradCheckReport", "NonFiniteError", "grad_check",
    "CheckpointError", "save_checkpoint", "load_checkpoint",
]
