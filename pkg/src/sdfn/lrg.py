"""Lung Region Generator: segmentation mask -> one box around both lungs -> crop.

Rules, in order:
  1. keep the two components whose centroids sit closest to the image centre;
  2. of two survivors, drop the smaller if its area is under a third of the larger;
  3. a lone survivor is mirrored about the vertical centreline, and the box
     is the union of the survivors' (or the region and its mirror's) boxes;
  4. the box grows by (left, top, right, bottom) margins, clamped to the image.
"""
import csv
from dataclasses import dataclass

import numpy as np

from . import kernels

# margins in pixels at a 1024-pixel reference extent: left, top, right, bottom
DEFAULT_MARGINS = (15, 15, 15, 20)
REFERENCE_EXTENT = 1024

CLEAN = "clean"
FP_REMOVED = "fp-removed"
MIRRORED = "mirrored"
FALLBACK = "fallback"


class SegmentationFailure(ValueError):
    """No foreground region to build a box from."""


@dataclass(frozen=True)
class Region:
    label: int
    area: int
    centroid: tuple     # (x, y)
    box: tuple          # (x0, y0, x1, y1) inclusive


@dataclass(frozen=True)
class BoundingBox:
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise ValueError(f"inverted box {self.as_tuple()}")

    @property
    def width(self):
        return self.x1 - self.x0 + 1

    @property
    def height(self):
        return self.y1 - self.y0 + 1

    def as_tuple(self):
        return (self.x0, self.y0, self.x1, self.y1)

    def within(self, width, height):
        return 0 <= self.x0 <= self.x1 < width and 0 <= self.y0 <= self.y1 < height

    def contains(self, other):
        return (self.x0 <= other.x0 and self.y0 <= other.y0
                and self.x1 >= other.x1 and self.y1 >= other.y1)


def label_components(mask):
    """4-connected regions of ``mask`` with area, centroid and tight box, in label order."""
    mask = np.asarray(mask, dtype=bool)
    labels, count = kernels.label4(mask)
    if count == 0:
        return []
    flat = labels.ravel()
    h, w = mask.shape
    ys, xs = np.divmod(np.arange(flat.size), w)
    fg = flat > 0
    lab = flat[fg]
    area = np.bincount(lab, minlength=count + 1)
    sx = np.bincount(lab, weights=xs[fg], minlength=count + 1)
    sy = np.bincount(lab, weights=ys[fg], minlength=count + 1)
    x0 = np.full(count + 1, w)
    y0 = np.full(count + 1, h)
    x1 = np.full(count + 1, -1)
    y1 = np.full(count + 1, -1)
    np.minimum.at(x0, lab, xs[fg])
    np.minimum.at(y0, lab, ys[fg])
    np.maximum.at(x1, lab, xs[fg])
    np.maximum.at(y1, lab, ys[fg])
    return [Region(i, int(area[i]), (sx[i] / area[i], sy[i] / area[i]),
                   (int(x0[i]), int(y0[i]), int(x1[i]), int(y1[i])))
            for i in range(1, count + 1)]


def select_two_central(regions, image_width, image_height):
    """Keep the (at most) two regions whose centroids are nearest the image centre.

    Ties go to the larger area, then the smaller label. Survivors are returned
    in label order.
    """
    if len(regions) <= 2:
        return list(regions)
    cx = (image_width - 1) / 2.0
    cy = (image_height - 1) / 2.0

    def key(r):
        dx = r.centroid[0] - cx
        dy = r.centroid[1] - cy
        return (dx * dx + dy * dy, -r.area, r.label)

    keep = sorted(regions, key=key)[:2]
    return sorted(keep, key=lambda r: r.label)


def drop_minor_region(regions):
    """Drop the smaller of two regions when its area is strictly below a third of the larger."""
    if len(regions) != 2:
        raise ValueError(f"drop_minor_region needs exactly two regions, got {len(regions)}")
    a, b = regions
    big, small = (a, b) if a.area >= b.area else (b, a)
    if 3 * small.area < big.area:
        return [big]
    return list(regions)


def _union(boxes):
    return (min(b[0] for b in boxes), min(b[1] for b in boxes),
            max(b[2] for b in boxes), max(b[3] for b in boxes))


def mirror_bound(regions, image_width):
    """Tight box over two regions, or over a lone region and its mirror image."""
    if not regions:
        raise SegmentationFailure("no regions to bound")
    if len(regions) > 2:
        raise ValueError(f"mirror_bound takes one or two regions, got {len(regions)}")
    if len(regions) == 2:
        return BoundingBox(*_union([r.box for r in regions]))
    x0, y0, x1, y1 = regions[0].box
    mirrored = (image_width - 1 - x1, y0, image_width - 1 - x0, y1)
    return BoundingBox(*_union([regions[0].box, mirrored]))


def scaled_margins(width, height, margins=None):
    """Margins rescaled from the 1024 reference, rounded half-up.

    Left/right scale with the width, top/bottom with the height.
    """
    left, top, right, bottom = DEFAULT_MARGINS if margins is None else margins

    def rnd(m, extent):
        return int(np.floor(m * extent / REFERENCE_EXTENT + 0.5))

    return rnd(left, width), rnd(top, height), rnd(right, width), rnd(bottom, height)


def expand_box(box, width, height, margins=None):
    """Grow ``box`` by the scaled margins and clamp to the image."""
    left, top, right, bottom = scaled_margins(width, height, margins)
    return BoundingBox(max(0, box.x0 - left), max(0, box.y0 - top),
                       min(width - 1, box.x1 + right), min(height - 1, box.y1 + bottom))


@dataclass(frozen=True)
class LungRegion:
    crop: np.ndarray
    box: BoundingBox
    status: str


def lung_box(mask, margins=None):
    """Run the rule chain on ``mask``; returns ``(BoundingBox, status)``.

    ``status`` is ``clean``, ``fallback`` (empty mask: full image), or a
    ``+``-joined list of the rules that fired (``fp-removed``, ``mirrored``).
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    regions = label_components(mask)
    if not regions:
        return BoundingBox(0, 0, w - 1, h - 1), FALLBACK
    fired = []
    kept = select_two_central(regions, w, h)
    if len(kept) < len(regions):
        fired.append(FP_REMOVED)
    if len(kept) == 2:
        kept = drop_minor_region(kept)
    if len(kept) == 1:
        fired.append(MIRRORED)
    box = expand_box(mirror_bound(kept, w), w, h, margins)
    return box, "+".join(fired) if fired else CLEAN


def generate_lung_region(image, mask, margins=None):
    """Crop the lung region of ``image`` using its segmentation ``mask``."""
    image = np.asarray(image)
    mask = np.asarray(mask, dtype=bool)
    if image.shape[:2] != mask.shape:
        raise ValueError(f"image {image.shape} and mask {mask.shape} extents differ")
    box, status = lung_box(mask, margins)
    crop = image[box.y0:box.y1 + 1, box.x0:box.x1 + 1].copy()
    return LungRegion(crop, box, status)


def write_boxes_csv(path, rows):
    """``rows`` are ``(image_id, BoundingBox, status)`` triples."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "x0", "y0", "x1", "y1", "status"])
        for image_id, box, status in rows:
            w.writerow([image_id, box.x0, box.y0, box.x1, box.y1, status])


def read_boxes_csv(path):
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            box = BoundingBox(int(rec["x0"]), int(rec["y0"]), int(rec["x1"]), int(rec["y1"]))
            out[rec["image_id"]] = (box, rec["status"])
    return out
