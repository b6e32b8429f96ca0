"""Two-view fusion model and fused class-activation maps.

The global extractor sees the whole radiograph, the local one sees the lung
crop. Their GAP vectors are concatenated and fed to a 14-way FC + sigmoid.
For class c, the CAM of each view is the FC-weighted channel sum of that
view's last feature maps (no bias); the two maps are resized back to image
coordinates, summed with the local map pasted at the crop box, and
min-max rescaled to [0, 255].
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from .data_synth.imageio import write_pgm, write_ppm
from .data_synth.transforms import resize_bilinear
from .labels import NUM_CLASSES, PATHOLOGIES
from .networks import (Dataset, FusionConfig, FusionHead, TrainConfig, TrainedModel, checksum,
                       mean_defined_auc, split_validation)
from .networks.training import fit_model
from .tensor_core import Tensor, bce_loss, no_grad

RAW = "raw"
RESCALED = "rescaled-0-255"


def _net(x):
    return x.model if isinstance(x, TrainedModel) else x


@dataclass
class SdfnModel:
    extractor_global: object
    extractor_local: object
    head: FusionHead = None
    frozen_global: bool = True
    frozen_local: bool = True
    freeze_checksums: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    best_epoch: int = 0

    def __post_init__(self):
        if self.head is None:
            self.head = FusionHead(FusionConfig(self.global_net.config.feature_dim,
                                                self.local_net.config.feature_dim))
        cfg = self.head.config
        if (cfg.global_dim, cfg.local_dim) != (self.global_net.config.feature_dim,
                                               self.local_net.config.feature_dim):
            raise ValueError("fusion head width does not match the extractors")

    @property
    def global_net(self):
        return _net(self.extractor_global)

    @property
    def local_net(self):
        return _net(self.extractor_local)

    @property
    def weight(self):
        return self.head.weight.data

    @property
    def bias(self):
        return self.head.bias.data

    def extractor_checksums(self):
        return checksum(self.global_net), checksum(self.local_net)


@dataclass
class Heatmap:
    values: np.ndarray
    value_range: str = RAW

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]


def _batch(x):
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if x.ndim == 2:
        return x[None, None], True
    if x.ndim == 3:
        return x[:, None], False
    return x, False


def view_outputs(model, whole_image, lung_crop):
    """Feature maps and GAP vectors of both extractors, inference mode."""
    xg, _ = _batch(whole_image)
    xl, _ = _batch(lung_crop)
    if len(xg) != len(xl):
        raise ValueError(f"{len(xg)} whole images but {len(xl)} crops")
    with no_grad():
        fg, gg, _, _ = model.global_net.forward(xg)
        fl, gl, _, _ = model.local_net.forward(xl)
    return fg.data, gg.data, fl.data, gl.data


def extract_features(model, whole_images, lung_crops, batch_size=64):
    """Concatenated GAP vectors, (N, K_global + K_local)."""
    out = []
    for lo in range(0, len(whole_images), batch_size):
        _, gg, _, gl = view_outputs(model, whole_images[lo:lo + batch_size],
                                    lung_crops[lo:lo + batch_size])
        out.append(np.concatenate([gg, gl], axis=1))
    width = model.head.config.global_dim + model.head.config.local_dim
    return np.concatenate(out) if out else np.empty((0, width))


def sdfn_logits(model, whole_image, lung_crop):
    _, single = _batch(whole_image)
    _, gg, _, gl = view_outputs(model, whole_image, lung_crop)
    with no_grad():
        logits, _ = model.head.forward(np.concatenate([gg, gl], axis=1))
    return logits.data[0] if single else logits.data


def sdfn_forward(model, whole_image, lung_crop):
    """Fused probabilities: (14,) for one image pair, (N, 14) for a batch."""
    _, single = _batch(whole_image)
    _, gg, _, gl = view_outputs(model, whole_image, lung_crop)
    with no_grad():
        _, probs = model.head.forward(np.concatenate([gg, gl], axis=1))
    return probs.data[0] if single else probs.data


# ---------------------------------------------------------------------------
# stage-3 training: only the head moves
# ---------------------------------------------------------------------------

def _head_loss(head, xb, yb):
    return bce_loss(yb, head.forward(xb, training=True)[1])


def _head_eval(head, val):
    with no_grad():
        _, probs = head.forward(val.images)
    return {"val_loss": bce_loss(val.targets, probs).item(),
            "val_mean_auc": mean_defined_auc(probs.data, val.targets)}


def fit_fusion_head(features, labels, groups, config=None, head=None, log=None, validation=None):
    """Train a fusion head on fixed feature vectors; returns ``(head, history, best_epoch)``."""
    config = config or TrainConfig.classification()
    features = np.asarray(features, dtype=np.float64)
    if len(features) == 0:
        raise ValueError("empty fusion training set")
    if head is None:
        head = FusionHead(FusionConfig(features.shape[1] // 2, features.shape[1] - features.shape[1] // 2))
    data = Dataset(features, labels, list(groups))
    train, val = (data, validation) if validation is not None else split_validation(data, config)
    history, best = fit_model(head, train, val, config, _head_loss, lambda x, y, rng: (x, y),
                              _head_eval, "max_val_mean_auc", log)
    return head, history, best


def train_fusion(model, whole_images, lung_crops, labels, groups, config=None, log=None):
    """Stage 3: fit the fusion head with both extractors frozen.

    Extractor features are computed once in inference mode; the extractor
    checksums are compared before and after and any change raises.
    """
    if not (model.frozen_global and model.frozen_local):
        raise ValueError("train_fusion requires both extractors to be frozen")
    if len(whole_images) == 0:
        raise ValueError("empty fusion training set")
    before = model.extractor_checksums()
    feats = extract_features(model, whole_images, lung_crops)
    head = FusionHead(model.head.config)
    head, history, best = fit_fusion_head(feats, labels, groups, config, head, log)
    after = model.extractor_checksums()
    if before != after:
        raise AssertionError("extractor parameters changed during fusion training")
    model.head = head
    model.history = history
    model.best_epoch = best
    model.freeze_checksums = {"global": [before[0], after[0]], "local": [before[1], after[1]]}
    return model


# ---------------------------------------------------------------------------
# class activation maps
# ---------------------------------------------------------------------------

def cam_from_features(weight_row, fmap_global, fmap_local):
    """Channel-weighted sums of (K, h, w) maps using the two halves of ``weight_row``."""
    kg = fmap_global.shape[0]
    h1 = np.tensordot(weight_row[:kg], fmap_global, axes=1)
    h2 = np.tensordot(weight_row[kg:], fmap_local, axes=1)
    return h1, h2


def cam(model, whole_image, lung_crop, c):
    """Raw per-view heatmaps for class ``c`` at feature-map resolution (bias excluded)."""
    if not 0 <= int(c) < NUM_CLASSES:
        raise IndexError(f"class index {c} out of range 0..{NUM_CLASSES - 1}")
    fg, _, fl, _ = view_outputs(model, whole_image, lung_crop)
    if len(fg) != 1:
        raise ValueError("cam works on a single image pair")
    h1, h2 = cam_from_features(model.weight[int(c)], fg[0], fl[0])
    return Heatmap(h1, RAW), Heatmap(h2, RAW)


def _values(h):
    return h.values if isinstance(h, Heatmap) else np.asarray(h, dtype=np.float64)


def fuse_and_rescale(h1, h2, box, image_width, image_height):
    """Resize, register and sum the two maps, then min-max to [0, 255]."""
    if not box.within(image_width, image_height):
        raise ValueError(f"box {box.as_tuple()} outside a {image_width}x{image_height} image")
    canvas = resize_bilinear(_values(h1), image_width, image_height)
    local = np.zeros((image_height, image_width))
    local[box.y0:box.y1 + 1, box.x0:box.x1 + 1] = resize_bilinear(_values(h2), box.width, box.height)
    fused = canvas + local
    lo, hi = fused.min(), fused.max()
    if hi == lo:
        return Heatmap(np.zeros_like(fused), RESCALED)
    return Heatmap((fused - lo) / (hi - lo) * 255.0, RESCALED)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def jet(t):
    """Piecewise-linear jet colormap, ``t`` in [0, 1] -> RGB in [0, 1]."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    r = np.clip(1.5 - np.abs(4.0 * t - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * t - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * t - 1.0), 0.0, 1.0)
    return np.stack([r, g, b], axis=-1)


def overlay(image, heatmap, alpha=0.5):
    """Blend the colour-mapped heatmap over a grayscale image; uint8-range RGB."""
    gray = np.repeat(np.clip(image, 0.0, 1.0)[..., None], 3, axis=-1)
    colour = jet(_values(heatmap) / 255.0)
    return np.rint(255.0 * ((1.0 - alpha) * gray + alpha * colour))


def export_cam(prefix, image, heatmap):
    """Write ``prefix.pgm`` (8-bit heatmap) and ``prefix.ppm`` (overlay)."""
    write_pgm(f"{prefix}.pgm", _values(heatmap) / 255.0)
    write_ppm(f"{prefix}.ppm", overlay(image, heatmap))


def write_scores_csv(path, rows):
    """``rows`` are ``(image_id, logits, probs)``; one line per image and class."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "pathology", "logit", "probability"])
        for image_id, logits, probs in rows:
            for name, z, p in zip(PATHOLOGIES, logits, probs):
                w.writerow([image_id, name, repr(float(z)), repr(float(p))])
