"""Layer catalog: a declarative spec, parameter allocation, and dispatch."""
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .tensor import Tensor

KINDS = ("conv2d", "batch_norm", "relu", "avg_pool2d", "global_avg_pool",
         "fully_connected", "concat", "sigmoid", "upsample2x")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 1
    stride: int = 1
    pad: int = 0
    window: int = 2
    momentum: float = 0.9
    eps: float = 1e-5
    bias: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ops.ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv2d", "fully_connected"):
            if self.in_channels < 1 or self.out_channels < 1:
                raise ops.ConfigError(f"{self.kind} needs positive channel counts")
        if self.kind == "conv2d" and (self.kernel < 1 or self.stride < 1 or self.pad < 0):
            raise ops.ConfigError("conv2d needs kernel >= 1, stride >= 1, pad >= 0")
        if self.kind == "batch_norm" and self.in_channels < 1:
            raise ops.ConfigError("batch_norm needs in_channels >= 1")
        if self.kind == "avg_pool2d" and self.window < 1:
            raise ops.ConfigError("avg_pool2d needs window >= 1")

    @property
    def arity(self):
        return None if self.kind == "concat" else 1


def conv(in_ch, out_ch, kernel=3, stride=1, pad=None, bias=True):
    return LayerSpec("conv2d", in_ch, out_ch, kernel, stride,
                     kernel // 2 if pad is None else pad, bias=bias)


def bn(ch, momentum=0.9):
    return LayerSpec("batch_norm", in_channels=ch, momentum=momentum)


def fc(in_f, out_f):
    return LayerSpec("fully_connected", in_f, out_f)


@dataclass
class Layer:
    """A spec plus its trainable parameters and non-trainable buffers."""

    spec: LayerSpec
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)

    def __call__(self, *inputs, training=False):
        return layer_forward(self, *inputs, training=training)


def make_layer(spec, rng):
    """Allocate parameters for ``spec`` with He fan-in scaling."""
    layer = Layer(spec)
    if spec.kind == "conv2d":
        fan_in = spec.in_channels * spec.kernel * spec.kernel
        w = rng.standard_normal((spec.out_channels, spec.in_channels, spec.kernel, spec.kernel))
        layer.params["weight"] = Tensor(w * np.sqrt(2.0 / fan_in), requires_grad=True)
        if spec.bias:
            layer.params["bias"] = Tensor(np.zeros(spec.out_channels), requires_grad=True)
    elif spec.kind == "fully_connected":
        w = rng.standard_normal((spec.out_channels, spec.in_channels))
        layer.params["weight"] = Tensor(w * np.sqrt(2.0 / spec.in_channels), requires_grad=True)
        layer.params["bias"] = Tensor(np.zeros(spec.out_channels), requires_grad=True)
    elif spec.kind == "batch_norm":
        c = spec.in_channels
        layer.params["gamma"] = Tensor(np.ones(c), requires_grad=True)
        layer.params["beta"] = Tensor(np.zeros(c), requires_grad=True)
        layer.buffers["running_mean"] = np.zeros(c)
        layer.buffers["running_var"] = np.ones(c)
    return layer


def layer_forward(layer, *inputs, training=False):
    spec = layer.spec if isinstance(layer, Layer) else layer
    if spec.arity is not None and len(inputs) != spec.arity:
        raise ops.ShapeError(f"{spec.kind} takes {spec.arity} input(s), got {len(inputs)}")
    kind = spec.kind
    if kind in ("conv2d", "fully_connected", "batch_norm") and not isinstance(layer, Layer):
        raise ops.ConfigError(f"{kind} needs an allocated Layer, not a bare spec")
    x = inputs[0] if inputs else None
    if kind == "conv2d":
        if x.shape[1] != spec.in_channels:
            raise ops.ShapeError(f"conv2d expects {spec.in_channels} channels, got {x.shape[1]}")
        return ops.conv2d(x, layer.params["weight"], layer.params.get("bias"),
                          stride=spec.stride, pad=spec.pad)
    if kind == "batch_norm":
        return ops.batch_norm(x, layer.params["gamma"], layer.params["beta"],
                              layer.buffers["running_mean"], layer.buffers["running_var"],
                              training, momentum=spec.momentum, eps=spec.eps)
    if kind == "relu":
        return ops.relu(x)
    if kind == "avg_pool2d":
        return ops.avg_pool2d(x, spec.window)
    if kind == "global_avg_pool":
        return ops.global_avg_pool(x)
    if kind == "fully_connected":
        return ops.linear(x, layer.params["weight"], layer.params["bias"])
    if kind == "concat":
        return ops.concat(inputs, axis=1)
    if kind == "sigmoid":
        return ops.sigmoid(x)
    if kind == "upsample2x":
        return ops.upsample2x(x)
    raise ops.ConfigError(kind)  # pragma: no cover
