"""Mini densely-connected classifier and mini encoder-decoder segmenter."""
from dataclasses import asdict, dataclass

import numpy as np

from ..labels import NUM_CLASSES
from ..tensor_core import Tensor, layer_forward, make_layer
from ..tensor_core import ops
from ..tensor_core.layers import LayerSpec, bn, conv, fc

RELU = LayerSpec("relu")


@dataclass(frozen=True)
class MiniDenseNetConfig:
    input_size: int = 64
    growth_rate: int = 8
    blocks: tuple = (2, 2, 2)
    init_channels: int = 16
    compression: float = 0.5
    bottleneck: bool = False
    stem_kernel: int = 3
    stem_stride: int = 1
    stem_pool: int = 2
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        if self.num_classes != NUM_CLASSES:
            raise ops.ConfigError(f"num_classes is fixed at {NUM_CLASSES}")
        if not self.blocks or min(self.blocks) < 1 or self.growth_rate < 1:
            raise ops.ConfigError("need at least one dense block of positive depth")
        if self.feature_extent < 1:
            raise ops.ConfigError(f"input {self.input_size} collapses below 1x1")

    @classmethod
    def paper_scale(cls):
        return cls(input_size=224, growth_rate=32, blocks=(6, 12, 24, 16), init_channels=64,
                   bottleneck=True, stem_kernel=7, stem_stride=2, stem_pool=2)

    def channel_plan(self):
        """Channels entering each block and leaving each transition."""
        plan = []
        c = self.init_channels
        for i, depth in enumerate(self.blocks):
            c_in = c
            c = c + depth * self.growth_rate
            c_out = c
            if i < len(self.blocks) - 1:
                c = int(c * self.compression)
            plan.append((c_in, c_out, c))
        return plan

    @property
    def feature_dim(self):
        return self.channel_plan()[-1][1]

    @property
    def feature_extent(self):
        s = (self.input_size + 2 * (self.stem_kernel // 2) - self.stem_kernel) // self.stem_stride + 1
        s //= self.stem_pool
        for _ in range(len(self.blocks) - 1):
            s //= 2
        return s

    def to_dict(self):
        d = asdict(self)
        d["blocks"] = list(self.blocks)
        return d


@dataclass(frozen=True)
class MiniUNetConfig:
    input_size: int = 64
    depth: int = 3
    base_channels: int = 8

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1:
            raise ops.ConfigError("depth and base_channels must be positive")
        if self.input_size % (2 ** self.depth):
            raise ops.ConfigError(f"input_size {self.input_size} not divisible by 2^{self.depth}")

    def to_dict(self):
        return asdict(self)


class Network:
    """Ordered layers with named parameters; subclasses define ``forward``."""

    kind = ""

    def __init__(self, config, seed=0):
        self.config = config
        self.layers = {}
        self._rng = np.random.default_rng(seed)

    def _add(self, name, spec):
        self.layers[name] = make_layer(spec, self._rng)
        return name

    def parameters(self):
        return [(f"{n}.{k}", t) for n, layer in self.layers.items() for k, t in layer.params.items()]

    def buffers(self):
        return [(f"{n}.{k}", a) for n, layer in self.layers.items() for k, a in layer.buffers.items()]

    def state_arrays(self):
        return [t.data for _, t in self.parameters()] + [a for _, a in self.buffers()]

    def state_copy(self):
        return [a.copy() for a in self.state_arrays()]

    def load_state(self, arrays):
        dest = self.state_arrays()
        if len(dest) != len(arrays):
            raise ValueError(f"state has {len(arrays)} arrays, model needs {len(dest)}")
        for d, s in zip(dest, arrays):
            if d.shape != np.shape(s):
                raise ValueError(f"state array shape {np.shape(s)} != {d.shape}")
            d[...] = s

    def parameter_count(self):
        return sum(t.size for _, t in self.parameters())

    def __call__(self, x, training=False):
        return self.forward(x, training)

    def _run(self, name, x, training):
        return layer_forward(self.layers[name], x, training=training)

    def _check_input(self, x):
        s = self.config.input_size
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (s, s):
            raise ops.ShapeError(f"{self.kind} expects input (N, 1, {s}, {s}), got {x.shape}")


class MiniDenseNet(Network):
    kind = "densenet"

    def __init__(self, config=None, seed=0):
        super().__init__(config or MiniDenseNetConfig(), seed)
        cfg = self.config
        g = cfg.growth_rate
        self._add("stem.conv", conv(1, cfg.init_channels, cfg.stem_kernel, cfg.stem_stride, bias=False))
        self._add("stem.bn", bn(cfg.init_channels))
        self.block_inputs = []
        for b, (c_in, c_out, c_next) in enumerate(cfg.channel_plan()):
            widths = []
            c = c_in
            for i in range(cfg.blocks[b]):
                widths.append(c)
                p = f"block{b}.layer{i}"
                if cfg.bottleneck:
                    self._add(p + ".bn1", bn(c))
                    self._add(p + ".conv1", conv(c, 4 * g, 1, bias=False))
                    self._add(p + ".bn2", bn(4 * g))
                    self._add(p + ".conv2", conv(4 * g, g, 3, bias=False))
                else:
                    self._add(p + ".bn1", bn(c))
                    self._add(p + ".conv1", conv(c, g, 3, bias=False))
                c += g
            self.block_inputs.append(widths)
            if b < len(cfg.blocks) - 1:
                self._add(f"trans{b}.bn", bn(c_out))
                self._add(f"trans{b}.conv", conv(c_out, c_next, 1, bias=False))
        self._add("final.bn", bn(cfg.feature_dim))
        self._add("fc", fc(cfg.feature_dim, cfg.num_classes))

    def features(self, x, training=False):
        x = x if isinstance(x, Tensor) else Tensor(x)
        self._check_input(x)
        cfg = self.config
        h = self._run("stem.conv", x, training)
        h = ops.relu(self._run("stem.bn", h, training))
        if cfg.stem_pool > 1:
            h = ops.avg_pool2d(h, cfg.stem_pool)
        for b, depth in enumerate(cfg.blocks):
            for i in range(depth):
                p = f"block{b}.layer{i}"
                y = self._run(p + ".conv1", ops.relu(self._run(p + ".bn1", h, training)), training)
                if cfg.bottleneck:
                    y = self._run(p + ".conv2", ops.relu(self._run(p + ".bn2", y, training)), training)
                h = ops.concat([h, y], axis=1)
            if b < len(cfg.blocks) - 1:
                h = self._run(f"trans{b}.conv", ops.relu(self._run(f"trans{b}.bn", h, training)),
                              training)
                h = ops.avg_pool2d(h, 2)
        return ops.relu(self._run("final.bn", h, training))

    def forward(self, x, training=False):
        fmap = self.features(x, training)
        gap = ops.global_avg_pool(fmap)
        logits = self._run("fc", gap, training)
        return fmap, gap, logits, ops.sigmoid(logits)


def densenet_forward(model, image, training=False):
    """Returns ``(feature_maps, gap_vector, logits, probs)``."""
    return model.forward(image, training)


class MiniUNet(Network):
    kind = "unet"

    def __init__(self, config=None, seed=0):
        super().__init__(config or MiniUNetConfig(), seed)
        cfg = self.config
        widths = [cfg.base_channels * 2 ** i for i in range(cfg.depth + 1)]
        c = 1
        for lvl in range(cfg.depth + 1):
            self._block(f"enc{lvl}", c, widths[lvl])
            c = widths[lvl]
        for lvl in reversed(range(cfg.depth)):
            self._block(f"dec{lvl}", c + widths[lvl], widths[lvl])
            c = widths[lvl]
        self._add("head", conv(c, 1, 1))

    def _block(self, name, c_in, c_out):
        self._add(name + ".conv1", conv(c_in, c_out, 3, bias=False))
        self._add(name + ".bn1", bn(c_out))
        self._add(name + ".conv2", conv(c_out, c_out, 3, bias=False))
        self._add(name + ".bn2", bn(c_out))

    def _apply_block(self, name, x, training):
        x = ops.relu(self._run(name + ".bn1", self._run(name + ".conv1", x, training), training))
        return ops.relu(self._run(name + ".bn2", self._run(name + ".conv2", x, training), training))

    def forward(self, x, training=False):
        x = x if isinstance(x, Tensor) else Tensor(x)
        self._check_input(x)
        depth = self.config.depth
        skips = []
        h = x
        for lvl in range(depth):
            h = self._apply_block(f"enc{lvl}", h, training)
            skips.append(h)
            h = ops.avg_pool2d(h, 2)
        h = self._apply_block(f"enc{depth}", h, training)
        for lvl in reversed(range(depth)):
            h = ops.concat([ops.upsample2x(h), skips[lvl]], axis=1)
            h = self._apply_block(f"dec{lvl}", h, training)
        return ops.sigmoid(self._run("head", h, training))


def unet_forward(model, image, training=False):
    """Per-pixel lung probability, same extent as ``image``."""
    return model.forward(image, training)




@dataclass(frozen=True)
class FusionConfig:
    global_dim: int = 32
    local_dim: int = 32
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        if self.global_dim < 1 or self.local_dim < 1:
            raise ops.ConfigError("feature widths must be positive")

    def to_dict(self):
        return asdict(self)


class FusionHead(Network):
    """14-way FC over concatenated GAP vectors; starts at zero (every prob 0.5)."""

    kind = "fusion"

    def __init__(self, config=None, seed=0):
        super().__init__(config or FusionConfig(), seed)
        cfg = self.config
        self._add("fc", fc(cfg.global_dim + cfg.local_dim, cfg.num_classes))
        for t in self.layers["fc"].params.values():
            t.data[...] = 0.0

    @property
    def weight(self):
        return self.layers["fc"].params["weight"]

    @property
    def bias(self):
        return self.layers["fc"].params["bias"]

    def forward(self, features, training=False):
        x = features if isinstance(features, Tensor) else Tensor(features)
        width = self.config.global_dim + self.config.local_dim
        if x.ndim != 2 or x.shape[1] != width:
            raise ops.ShapeError(f"fusion head expects (N, {width}) features, got {x.shape}")
        logits = self._run("fc", x, training)
        return logits, ops.sigmoid(logits)


def build_model(kind, config, seed=0):
    types = {"densenet": MiniDenseNet, "unet": MiniUNet, "fusion": FusionHead}
    if kind not in types:
        raise ValueError(f"unknown model kind {kind!r}")
    return types[kind](config, seed)
