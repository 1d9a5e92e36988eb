"""Minimal reverse-mode autodiff engine and the layers the networks need."""

from .gradcheck import GradCheckReport, grad_check, relative_error
from .layers import (
    BatchNorm1d,
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    Flatten,
    GlobalAvgPool,
    LayerNorm,
    LayerSpec,
    LeakyReLU,
    Linear,
    Module,
    MultiHeadAttention,
    Parameter,
    Patchify,
    ReLU,
    Reshape,
    ResidualBlock,
    SeparableAttention,
    Sequential,
    Sigmoid,
    Softmax,
    Unpatchify,
    build_layer,
    recalibrate_batchnorm,
    build_sequential,
)
from .losses import bce, cross_entropy, mse, per_sample_mse
from .optim import Adam, Adamax, Optimizer, OptimizerState, make_optimizer
from .tensor import ShapeError, Tensor, as_tensor, concat, no_grad

__all__ = [name for name in dir() if not name.startswith("_")]
