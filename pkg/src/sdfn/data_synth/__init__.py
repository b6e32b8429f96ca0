"""Phantom corpus generation, netpbm I/O, resizing, augmentation, manifests."""
from .imageio import PnmFormatError, encode_pgm, parse_pgm, read_pgm, read_ppm, write_pgm, write_ppm
from .manifest import (COLUMNS, ManifestError, ManifestRow, label_matrix, read_manifest,
                       write_manifest)
from .phantom import (LUNG_CONFINED, PhantomRecord, PhantomSpec, format_phantom_spec,
                      gen_phantom, make_record, parse_phantom_spec, read_phantom_spec,
                      write_phantom_spec)
from .transforms import (IDENTITY, AugmentParams, AugmentRanges, augment, resize_batch,
                         resize_bilinear, resize_mask, sample_affine, sample_flip)

__all__ = [
    "COLUMNS", "IDENTITY", "LUNG_CONFINED", "AugmentParams", "AugmentRanges", "ManifestError",
    "ManifestRow", "PhantomRecord", "PhantomSpec", "PnmFormatError", "augment", "encode_pgm",
    "format_phantom_spec", "gen_phantom", "label_matrix", "make_record", "parse_pgm",
    "parse_phantom_spec", "read_manifest", "read_pgm", "read_phantom_spec", "read_ppm",
    "resize_batch", "resize_bilinear", "resize_mask", "sample_affine", "sample_flip",
    "write_manifest", "write_pgm", "write_phantom_spec", "write_ppm",
]
