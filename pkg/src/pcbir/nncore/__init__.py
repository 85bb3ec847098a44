"""Minimal reverse-mode differentiation, layers, Adam and gradient checking."""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check, grad_check_fn, projection_loss, relative_error
from .layers import (
    LAYER_KINDS,
    LayerSpec,
    Network,
    Parameter,
    ShapeError,
    build_network,
    frozen,
    instance_norm,
)
from .optim import Adam, NonFiniteGradientError, OptimizerConfig, optimizer_step
from .tensor import (
    GraphError,
    Tensor,
    concat,
    conv2d,
    conv_transpose2d,
    grad_enabled,
    maximum,
    minimum,
    no_grad,
    stack,
    tensor,
)

__all__ = [
    "Adam", "Checkpoint", "CheckpointError", "GradCheckReport", "GraphError", "LAYER_KINDS",
    "LayerSpec", "Network", "NonFiniteGradientError", "OptimizerConfig", "Parameter",
    "ShapeError", "Tensor", "build_network", "concat", "conv2d", "conv_transpose2d",
    "frozen", "grad_check", "grad_check_fn", "grad_enabled", "instance_norm",
    "load_checkpoint", "maximum", "minimum", "no_grad", "optimizer_step",
    "projection_loss", "relative_error", "save_checkpoint", "stack", "tensor",
]
