"""Reverse-mode autodiff core: tensors, NN ops, layers, optimizers."""

from .tensor import Tensor, no_grad, is_grad_enabled
from .functional import (
    BNState,
    assert_finite,
    batchnorm3d,
    conv3d,
    conv_output_size,
    depthwise_conv3d,
    global_avg_pool3d,
    linear,
    relu6,
    resize_bilinear,
    softmax,
    softmax_cross_entropy,
    trilinear_upsample,
)
from .modules import (
    BatchNorm3d,
    Conv3d,
    DepthwiseConv3d,
    Linear,
    Module,
    ModuleList,
    Parameter,
)
from .optim import SGD, Adam, cosine_lr
from .backends import active_backend, available_backends, get_backend

__all__ = [
    "Tensor", "no_grad", "is_grad_enabled",
    "BNState", "assert_finite", "batchnorm3d", "conv3d", "conv_output_size",
    "depthwise_conv3d", "global_avg_pool3d", "linear", "relu6",
    "resize_bilinear", "softmax", "softmax_cross_entropy", "trilinear_upsample",
    "BatchNorm3d", "Conv3d", "DepthwiseConv3d", "Linear", "Module",
    "ModuleList", "Parameter",
    "SGD", "Adam", "cosine_lr",
    "active_backend", "available_backends", "get_backend",
]
