"""Synthetic chest-radiograph phantoms with exact ground truth.

Every shape is rasterised in *scene* coordinates (normalised to [0, 1]); a
misaligned acquisition only changes the pixel-to-scene map, so the lung mask
and lesion masks stay pixel-exact under shift and rotation.

Two classes are built to separate the views: nodules are clusters of 2-3 px
dots that a 4x downsample mostly steps over, and emphysema only changes the
air outside the body, which no lung crop can see.
"""
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import ndimage

from ..labels import EMPHYSEMA, NODULE, NUM_CLASSES, PATHOLOGIES

LUNG_CONFINED = frozenset(i for i, name in enumerate(PATHOLOGIES)
                          if name not in ("cardiomegaly", "emphysema", "hernia"))

_DEFAULT_PREVALENCE = (0.2,) * NODULE + (0.4,) + (0.2,) * (EMPHYSEMA - NODULE - 1) + (0.35,) + (0.2,) * 3


@dataclass(frozen=True)
class PhantomSpec:
    extent: int = 256
    prevalence: tuple = _DEFAULT_PREVALENCE
    small_lesion_px: tuple = (2, 3)
    large_lesion_px: tuple = (20, 60)
    small_classes: tuple = ("nodule",)
    small_lesion_contrast: float = 0.50
    small_lesion_count: tuple = (4, 8)
    out_of_lung_contrast: float = 0.12
    misalignment_prob: float = 0.2
    max_shift: float = 0.05
    max_rotation_deg: float = 6.0
    object_prob: float = 0.3
    noise: float = 0.03
    patients: int = 100
    images_per_patient: int = 2

    def __post_init__(self):
        object.__setattr__(self, "prevalence", tuple(float(p) for p in self.prevalence))
        object.__setattr__(self, "small_lesion_px", tuple(int(v) for v in self.small_lesion_px))
        object.__setattr__(self, "large_lesion_px", tuple(int(v) for v in self.large_lesion_px))
        object.__setattr__(self, "small_lesion_count", tuple(int(v) for v in self.small_lesion_count))
        object.__setattr__(self, "small_classes", tuple(self.small_classes))
        self.validate()

    def validate(self):
        if len(self.prevalence) != NUM_CLASSES:
            raise ValueError(f"prevalence needs {NUM_CLASSES} entries, got {len(self.prevalence)}")
        if any(not 0.0 <= p <= 1.0 for p in self.prevalence):
            raise ValueError("prevalences must lie in [0, 1]")
        lo_s, hi_s = self.small_lesion_px
        lo_l, hi_l = self.large_lesion_px
        if min(lo_s, lo_l) < 1 or lo_s > hi_s or lo_l > hi_l:
            raise ValueError("lesion size ranges must be positive and ordered")
        lo_n, hi_n = self.small_lesion_count
        if lo_n < 1 or lo_n > hi_n:
            raise ValueError("small-lesion count range must be positive and ordered")
        if hi_s >= lo_l:
            raise ValueError("small-lesion upper bound must be below the large-lesion lower bound")
        for name in self.small_classes:
            if name not in PATHOLOGIES:
                raise ValueError(f"unknown small-lesion class {name!r}")
        if self.extent < 16:
            raise ValueError("extent must be at least 16 pixels")
        if self.patients < 1 or self.images_per_patient < 1:
            raise ValueError("need at least one patient and one image per patient")
        for name in ("misalignment_prob", "object_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @property
    def count(self):
        return self.patients * self.images_per_patient

    def replace(self, **changes):
        values = asdict(self)
        values.update(changes)
        return PhantomSpec(**values)


@dataclass
class PhantomRecord:
    image_id: str
    patient_id: str
    image: np.ndarray
    lung_mask: np.ndarray
    labels: np.ndarray
    lesion_boxes: list = field(default_factory=list)   # (class_index, x0, y0, x1, y1)
    lesion_masks: dict = field(default_factory=dict)   # class_index -> bool mask
    misaligned: bool = False
    has_object: bool = False


# ---------------------------------------------------------------------------
# spec file: plain "key = value" lines, tuples comma-separated
# ---------------------------------------------------------------------------

def format_phantom_spec(spec):
    lines = []
    for f in fields(spec):
        v = getattr(spec, f.name)
        if isinstance(v, tuple):
            v = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def parse_phantom_spec(text):
    defaults = PhantomSpec()
    values = {}
    known = {f.name for f in fields(PhantomSpec)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(getattr(defaults, key), val)
    return PhantomSpec(**values)


def _coerce(default, text):
    if isinstance(default, tuple):
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if default and isinstance(default[0], str):
            return tuple(parts)
        if default and isinstance(default[0], int):
            return tuple(int(p) for p in parts)
        return tuple(float(p) for p in parts)
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(text)
    return float(text)


def read_phantom_spec(path):
    with open(path) as fh:
        return parse_phantom_spec(fh.read())


def write_phantom_spec(path, spec):
    with open(path, "w") as fh:
        fh.write(format_phantom_spec(spec))


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Anatomy:
    lung_dx: float
    lung_cy: float
    lung_a: float
    lung_b: float
    body_level: float
    lung_level: float
    heart_cx: float


def _anatomy(seed, pid):
    rng = np.random.default_rng([seed, 7_000_003, pid])
    return _Anatomy(
        lung_dx=float(rng.uniform(0.165, 0.18)),
        lung_cy=float(rng.uniform(0.46, 0.50)),
        lung_a=float(rng.uniform(0.11, 0.125)),
        lung_b=float(rng.uniform(0.22, 0.25)),
        body_level=float(rng.uniform(0.52, 0.58)),
        lung_level=float(rng.uniform(0.20, 0.24)),
        heart_cx=float(rng.uniform(0.51, 0.54)),
    )


def _ellipse(u, v, cx, cy, a, b, power=2.0):
    return np.abs((u - cx) / a) ** power + np.abs((v - cy) / b) ** power <= 1.0


def _sample_in_ellipse(rng, cx, cy, a, b, shrink):
    r = shrink * math.sqrt(rng.random())
    t = rng.uniform(0, 2 * math.pi)
    return cx + r * a * math.cos(t), cy + r * b * math.sin(t)


def _box_of(mask):
    ys, xs = np.nonzero(mask)
    return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


def gen_phantom(spec, seed, keep_lesion_masks=False):
    """Yield ``spec.count`` records, deterministic per ``(spec, seed)``."""
    for index in range(spec.count):
        yield make_record(spec, seed, index, keep_lesion_masks)


def make_record(spec, seed, index, keep_lesion_masks=False):
    """Build record ``index`` of the ``(spec, seed)`` corpus on its own derived stream."""
    s = spec.extent
    pid = index // spec.images_per_patient
    anat = _anatomy(seed, pid)
    rng = np.random.default_rng([seed, index])
    px = 1.0 / s

    misaligned = bool(rng.random() < spec.misalignment_prob)
    theta, tx, ty = 0.0, 0.0, 0.0
    if misaligned:
        theta = math.radians(rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg))
        tx, ty = rng.uniform(-spec.max_shift, spec.max_shift, size=2)
    coords = (np.arange(s) + 0.5) / s
    pu, pv = np.meshgrid(coords, coords)
    du, dv = pu - 0.5 - tx, pv - 0.5 - ty
    c, sn = math.cos(theta), math.sin(theta)
    u = 0.5 + c * du + sn * dv
    v = 0.5 - sn * du + c * dv

    labels = (rng.random(NUM_CLASSES) < np.asarray(spec.prevalence)).astype(np.int64)

    heart_scale = 1.35 if labels[1] else 1.0
    heart = _ellipse(u, v, anat.heart_cx, 0.68, 0.09 * heart_scale, 0.07 * heart_scale)
    lungs_c = [(0.5 - anat.lung_dx, anat.lung_cy), (0.5 + anat.lung_dx, anat.lung_cy)]
    lung_parts = [_ellipse(u, v, cx, cy, anat.lung_a, anat.lung_b) & ~heart for cx, cy in lungs_c]
    lung = lung_parts[0] | lung_parts[1]
    body = _ellipse(u, v, 0.5, 0.52, 0.45, 0.47)

    air = 0.08 + (spec.out_of_lung_contrast if labels[EMPHYSEMA] else 0.0)
    img = np.where(body, anat.body_level, air)
    texture = ndimage.gaussian_filter(rng.standard_normal((s, s)), sigma=3.0 * s / 256)
    texture *= 0.03 / max(texture.std(), 1e-12)
    img = np.where(lung, anat.lung_level + texture, img)
    img = np.where(heart, 0.75, img)

    lesion_masks = {}
    small = {PATHOLOGIES.index(n) for n in spec.small_classes}
    lo_l, hi_l = spec.large_lesion_px
    lo_s, hi_s = spec.small_lesion_px

    def large(lo_frac, hi_frac):
        lo = lo_l + lo_frac * (hi_l - lo_l)
        hi = lo_l + hi_frac * (hi_l - lo_l)
        return rng.uniform(lo, hi) * px

    def pick_lung():
        return lungs_c[int(rng.integers(0, 2))]

    for k in np.flatnonzero(labels):
        k = int(k)
        cx, cy = pick_lung()
        a, b = anat.lung_a, anat.lung_b
        if k in small:
            # a few dots of diameter d; radius kept just under d/2 so the
            # pixel footprint never exceeds d pixels on either axis
            m = np.zeros((s, s), dtype=bool)
            lo_n, hi_n = spec.small_lesion_count
            for _ in range(int(rng.integers(lo_n, hi_n + 1))):
                d = int(rng.integers(lo_s, hi_s + 1))
                qx, qy = _sample_in_ellipse(rng, *pick_lung(), a, b, 0.7)
                m |= (u - qx) ** 2 + (v - qy) ** 2 <= ((d / 2 - 0.01) * px) ** 2
            m &= lung
            delta = spec.small_lesion_contrast
        elif k == 0:    # atelectasis: dense band across the lower lung
            L = large(0.0, 0.5)
            m = _ellipse(u, v, cx, cy + 0.55 * b, L / 2, L / 4) & lung
            delta = 0.18
        elif k == 1:    # cardiomegaly: the enlarged heart itself
            m = heart.copy()
            delta = 0.0
        elif k == 2:    # effusion: fluid level filling the lung base
            L = large(0.0, 0.5)
            m = (v > cy + b - L) & _ellipse(u, v, cx, cy, a, b) & lung
            delta = 0.30
        elif k == 3:    # infiltration: speckled patch
            L = large(0.0, 1.0)
            qx, qy = _sample_in_ellipse(rng, cx, cy, a, b, 0.5)
            m = _ellipse(u, v, qx, qy, L / 2, L / 2) & lung
            speck = ndimage.gaussian_filter((rng.random((s, s)) < 0.3).astype(float), 0.8 * s / 256)
            img = np.where(m, img + 0.35 * speck, img)
            delta = 0.0
        elif k == 4:    # mass: solid round lesion
            L = large(0.0, 0.25)
            qx, qy = _sample_in_ellipse(rng, cx, cy, a, b, 0.5)
            m = _ellipse(u, v, qx, qy, L / 2, L / 2) & lung
            delta = 0.28
        elif k == 6:    # pneumonia: soft-edged opacity
            L = large(0.25, 1.0)
            qx, qy = _sample_in_ellipse(rng, cx, cy, a, b, 0.5)
            blob = np.exp(-((u - qx) ** 2 + (v - qy) ** 2) / (2 * (L / 4) ** 2))
            m = (blob > 0.1) & lung
            img = np.where(m, img + 0.22 * blob, img)
            delta = 0.0
        elif k == 7:    # pneumothorax: lucent rim at the lateral apex
            outer = cx < 0.5
            edge = cx - 0.55 * a if outer else cx + 0.55 * a
            lateral = (u < edge) if outer else (u > edge)
            m = lateral & (v < cy) & lung
            delta = -0.12
        elif k == 8:    # consolidation: squarish homogeneous patch
            L = large(0.0, 0.5)
            qx, qy = _sample_in_ellipse(rng, cx, cy, a, b, 0.5)
            m = _ellipse(u, v, qx, qy, L / 2, L / 2, power=4.0) & lung
            delta = 0.25
        elif k == 9:    # edema: bilateral perihilar haze
            L = large(0.5, 1.0)
            m = np.zeros((s, s), dtype=bool)
            for lx, ly in lungs_c:
                hx = lx + (0.4 * a if lx < 0.5 else -0.4 * a)
                m |= _ellipse(u, v, hx, ly, L / 3, L / 2)
            m &= lung
            delta = 0.10
        elif k == EMPHYSEMA:    # signal lives in the air outside the body
            m = ~body
            delta = 0.0
        elif k == 11:   # fibrosis: thin streaks
            L = large(0.0, 0.5)
            m = np.zeros((s, s), dtype=bool)
            for _ in range(int(rng.integers(3, 6))):
                qx, qy = _sample_in_ellipse(rng, *pick_lung(), a, b, 0.6)
                ang = rng.uniform(0, math.pi)
                ex, ey = math.cos(ang), math.sin(ang)
                along = (u - qx) * ex + (v - qy) * ey
                across = -(u - qx) * ey + (v - qy) * ex
                m |= (np.abs(along) <= L / 2) & (np.abs(across) <= 0.8 * px)
            m &= lung
            delta = 0.20
        elif k == 12:   # pleural thickening: band hugging the lateral lung wall
            L = large(0.0, 0.5)
            outer = cx < 0.5
            inner = _ellipse(u, v, cx, cy, a - 3 * px, b - 3 * px)
            side = (u < cx) if outer else (u > cx)
            qy = cy + rng.uniform(-0.4, 0.4) * b
            m = lung & ~inner & side & (np.abs(v - qy) <= L / 2)
            delta = 0.30
        elif k == 13:   # hernia: retrocardiac blob above the diaphragm
            L = large(0.0, 0.25)
            m = _ellipse(u, v, 0.5, 0.80, L / 2, L / 3) & body & ~lung
            delta = 0.20
        else:  # pragma: no cover
            raise AssertionError(k)
        if not m.any():
            labels[k] = 0
            continue
        if delta:
            img = np.where(m, img + delta, img)
        lesion_masks[k] = m

    has_object = bool(rng.random() < spec.object_prob)
    if has_object:
        free = ~lung
        for _ in range(int(rng.integers(1, 5))):
            if rng.random() < 0.6:
                # lead/electrode: bright dot the size of a nodule or a little larger
                r = rng.uniform(1.0, 3.0) * px
                qx, qy = rng.uniform(0.08, 0.92, size=2)
                shape = (u - qx) ** 2 + (v - qy) ** 2 <= r * r
            else:
                w, h = rng.uniform(4, 16, size=2) * px
                qx, qy = rng.uniform(0.1, 0.9, size=2)
                shape = (np.abs(u - qx) <= w / 2) & (np.abs(v - qy) <= h / 2)
            img = np.where(shape & free, 0.95, img)

    img = ndimage.gaussian_filter(img, sigma=0.6 * s / 256)
    img = img + rng.normal(0.0, spec.noise, size=(s, s))
    img = np.clip(img, 0.0, 1.0)

    for k in lesion_masks:
        if k in LUNG_CONFINED:
            assert not (lesion_masks[k] & ~lung).any()
    boxes = [(k,) + _box_of(lesion_masks[k]) for k in sorted(lesion_masks)]

    return PhantomRecord(
        image_id=f"img{index:05d}",
        patient_id=f"p{pid:04d}",
        image=img,
        lung_mask=lung,
        labels=labels,
        lesion_boxes=boxes,
        lesion_masks=lesion_masks if keep_lesion_masks else {},
        misaligned=misaligned,
        has_object=has_object,
    )
