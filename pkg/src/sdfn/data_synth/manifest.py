"""CSV corpus index."""
import csv
from dataclasses import dataclass, field

import numpy as np

from ..labels import NUM_CLASSES, PATHOLOGIES

COLUMNS = ("image_id", "patient_id", "image_path", "mask_path") + PATHOLOGIES + ("lesion_boxes",)


class ManifestError(ValueError):
    pass


@dataclass
class ManifestRow:
    image_id: str
    patient_id: str
    image_path: str
    mask_path: str
    labels: tuple
    lesion_boxes: list = field(default_factory=list)

    def __post_init__(self):
        self.labels = tuple(int(v) for v in self.labels)
        self.lesion_boxes = [tuple(int(v) for v in b) for b in self.lesion_boxes]


def pack_boxes(boxes):
    return ";".join(":".join(str(v) for v in b) for b in boxes)


def unpack_boxes(text):
    if not text.strip():
        return []
    out = []
    for chunk in text.split(";"):
        parts = chunk.split(":")
        if len(parts) != 5:
            raise ManifestError(f"bad lesion box {chunk!r}")
        out.append(tuple(int(p) for p in parts))
    return out


def write_manifest(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([r.image_id, r.patient_id, r.image_path, r.mask_path,
                        *r.labels, pack_boxes(r.lesion_boxes)])


def read_manifest(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest") from None
        header = [h.strip() for h in header]
        for i, want in enumerate(COLUMNS):
            if i >= len(header):
                raise ManifestError(f"missing column {want!r}")
            if header[i] != want:
                raise ManifestError(f"column {i} must be {want!r}, found {header[i]!r}")
        if len(header) != len(COLUMNS):
            raise ManifestError(f"unexpected extra column {header[len(COLUMNS)]!r}")
        rows = []
        for lineno, rec in enumerate(reader, 2):
            if len(rec) != len(COLUMNS):
                raise ManifestError(f"line {lineno}: expected {len(COLUMNS)} fields, got {len(rec)}")
            labels = rec[4:4 + NUM_CLASSES]
            for name, v in zip(PATHOLOGIES, labels):
                if v not in ("0", "1"):
                    raise ManifestError(f"line {lineno}: label {name!r} is {v!r}, not 0/1")
            rows.append(ManifestRow(rec[0], rec[1], rec[2], rec[3], [int(v) for v in labels],
                                    unpack_boxes(rec[-1])))
    return rows


def label_matrix(rows):
    return np.array([r.labels for r in rows], dtype=np.float64).reshape(len(rows), NUM_CLASSES)
