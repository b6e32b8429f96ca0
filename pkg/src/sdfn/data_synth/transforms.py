"""Resizing and training-time augmentation."""
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .. import kernels


def resize_bilinear(image, target_w, target_h):
    """Corner-aligned bilinear resize of a 2-D image to ``target_h x target_w``."""
    img = np.asarray(image, dtype=np.float64)
    if target_w < 1 or target_h < 1:
        raise ValueError(f"zero target extent {target_w}x{target_h}")
    if img.shape == (target_h, target_w):
        return img.copy()
    return kernels.resize_bilinear(img, int(target_h), int(target_w))


def resize_batch(images, size):
    return np.stack([resize_bilinear(im, size, size) for im in images])


def resize_mask(mask, target_w, target_h):
    """Resize a binary mask by bilinear sampling then thresholding at 0.5."""
    return resize_bilinear(np.asarray(mask, dtype=np.float64), target_w, target_h) >= 0.5


@dataclass(frozen=True)
class AugmentRanges:
    rotation_deg: float = 10.0
    shift: float = 0.10
    zoom: tuple = (0.9, 1.1)
    flip_prob: float = 0.5


@dataclass(frozen=True)
class AugmentParams:
    rotation_deg: float = 0.0
    shift_x: float = 0.0
    shift_y: float = 0.0
    zoom: float = 1.0
    flip: bool = False

    @property
    def is_identity(self):
        return (self.rotation_deg == 0.0 and self.shift_x == 0.0 and self.shift_y == 0.0
                and self.zoom == 1.0 and not self.flip)


IDENTITY = AugmentParams()


def sample_affine(rng, ranges=AugmentRanges()):
    return AugmentParams(
        rotation_deg=float(rng.uniform(-ranges.rotation_deg, ranges.rotation_deg)),
        shift_x=float(rng.uniform(-ranges.shift, ranges.shift)),
        shift_y=float(rng.uniform(-ranges.shift, ranges.shift)),
        zoom=float(rng.uniform(*ranges.zoom)),
    )


def sample_flip(rng, ranges=AugmentRanges()):
    return AugmentParams(flip=bool(rng.random() < ranges.flip_prob))


def _affine(img, params, order):
    h, w = img.shape
    theta = math.radians(params.rotation_deg)
    cos, sin = math.cos(theta), math.sin(theta)
    # (row, col) frame; output -> input is the inverse of zoom-then-rotate-then-shift
    inv = np.array([[cos, sin], [-sin, cos]]) / params.zoom
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    shift = np.array([params.shift_y * h, params.shift_x * w])
    offset = centre - inv @ (centre + shift)
    return ndimage.affine_transform(img, inv, offset=offset, order=order,
                                    mode="constant", cval=0.0)


def augment(image, mask=None, params=IDENTITY):
    """Apply ``params`` to an image (and optionally its mask).

    Rotation, shift and zoom act identically on image and mask (mask warped
    bilinearly and re-thresholded at 0.5). Horizontal flip is a
    classification-time transform and is rejected when a mask is supplied.
    Returns the image, or ``(image, mask)`` when a mask was given.
    """
    img = np.asarray(image, dtype=np.float64)
    if mask is not None and params.flip:
        raise ValueError("flip is a classification-only augmentation")
    if params.is_identity:
        return img.copy() if mask is None else (img.copy(), np.asarray(mask, dtype=bool).copy())
    out = img
    if params.rotation_deg or params.shift_x or params.shift_y or params.zoom != 1.0:
        out = np.clip(_affine(img, params, order=1), 0.0, 1.0) if img.size else img
    if params.flip:
        out = out[:, ::-1].copy()
    if mask is None:
        return out
    warped = _affine(np.asarray(mask, dtype=np.float64), params, order=1) >= 0.5
    return out, warped
