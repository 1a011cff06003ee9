"""Minimal differentiable tensor engine: layers, autodiff, SGD."""
from .functional import (BNParams, batchnorm, bce_with_logits, concat, conv2d, l2norm, leaky_relu,
                         log_softmax, maxpool2d, mish, softmax, upsample_nearest)
from .model import ConvParams, ForwardResult, Network, layer_forward
from .optim import SGD, cosine_lr, sgd_step
from .tensor import Tensor, backward, grad_enabled, no_grad

__all__ = [
    "BNParams", "ConvParams", "ForwardResult", "Network", "SGD", "Tensor", "backward",
    "batchnorm", "bce_with_logits", "concat", "conv2d", "cosine_lr", "grad_enabled", "l2norm",
    "layer_forward", "leaky_relu", "log_softmax", "maxpool2d", "mish", "no_grad", "sgd_step",
    "softmax", "upsample_nearest",
]
