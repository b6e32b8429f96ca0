"""Minimal float64 tensor engine: tape autodiff, layer catalog, losses, Adam."""
from .gradcheck import grad_check
from .layers import KINDS, Layer, LayerSpec, layer_forward, make_layer
from .ops import (BCE_EPS, ConfigError, ShapeError, avg_pool2d, batch_norm, bce_loss, concat,
                  conv2d, global_avg_pool, linear, pixelwise_ce, relu, sigmoid, sigmoid_array,
                  upsample2x)
from .optim import AdamState, ReduceOnPlateau, adam_step
from .tensor import Tensor, no_grad

__all__ = [
    "AdamState", "BCE_EPS", "ConfigError", "KINDS", "Layer", "LayerSpec", "ReduceOnPlateau",
    "ShapeError", "Tensor", "adam_step", "avg_pool2d", "batch_norm", "bce_loss", "concat",
    "conv2d", "global_avg_pool", "grad_check", "layer_forward", "linear", "make_layer",
    "no_grad", "pixelwise_ce", "relu", "sigmoid", "sigmoid_array", "upsample2x",
]
