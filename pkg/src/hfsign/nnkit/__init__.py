"""Minimal differentiable kit: conv / transposed conv / linear layers,
activations, losses, Glorot init, Adam, and a finite-difference checker."""

from .functional import (
    bce_logit_grad,
    bce_loss,
    concat_channels,
    conv2d,
    conv2d_backward,
    conv_transpose2d,
    conv_transpose2d_backward,
    global_avg_pool,
    global_avg_pool_backward,
    l1_loss,
    linear,
    linear_backward,
    relu,
    sigmoid,
    split_channels,
)
from .gradcheck import GradCheckReport, grad_check
from .init import fans, xavier_init
from .layers import Activation, Block, Conv2d, ConvTranspose2d, LayerSpec, Linear, Network, build_layer
from .optim import AdamState, NonFiniteGradientError, adam_step

__all__ = [
    "Activation", "AdamState", "Block", "Conv2d", "ConvTranspose2d", "GradCheckReport",
    "LayerSpec", "Linear", "Network", "NonFiniteGradientError", "adam_step", "bce_logit_grad",
    "bce_loss", "build_layer", "concat_channels", "conv2d", "conv2d_backward",
    "conv_transpose2d", "conv_transpose2d_backward", "fans", "global_avg_pool",
    "global_avg_pool_backward", "grad_check", "l1_loss", "linear", "linear_backward", "relu",
    "sigmoid", "split_channels", "xavier_init",
]
