import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdfn import lrg
from sdfn.data_synth import PhantomSpec, make_record
from sdfn.lrg import (BoundingBox, Region, SegmentationFailure, drop_minor_region, expand_box,
                      generate_lung_region, label_components, lung_box, mirror_bound,
                      select_two_central)
from sdfn.oracles import flood_fill_regions, lrg_box, random_lrg_masks


def _region(label, area, cx, cy, box=(0, 0, 0, 0)):
    return Region(label, area, (cx, cy), box)


def test_label_components_rectangles():
    m = np.zeros((20, 30), bool)
    m[2:6, 3:9] = True
    m[10:19, 20:25] = True
    regions = label_components(m)
    assert [r.area for r in regions] == [24, 45]
    assert regions[0].centroid == (5.5, 3.5)
    assert regions[1].centroid == (22.0, 14.0)
    assert regions[1].box == (20, 10, 24, 18)
    assert label_components(np.zeros((4, 4))) == []


def test_label_components_match_flood_fill():
    for m in random_lrg_masks(200, seed=4):
        got = [(r.area, r.centroid[0], r.centroid[1]) + r.box for r in label_components(m)]
        assert got == flood_fill_regions(m.tolist())


def test_select_two_central():
    regions = [_region(1, 10, 300, 500), _region(2, 10, 700, 500), _region(3, 10, 100, 50)]
    kept = select_two_central(regions, 1024, 1024)
    assert [r.label for r in kept] == [1, 2]
    assert select_two_central(regions[:2], 1024, 1024) == regions[:2]


def test_select_ties_prefer_area_then_label():
    c = 511.5
    regions = [_region(1, 5, c + 10, c), _region(2, 9, c - 10, c), _region(3, 9, c, c + 10)]
    assert [r.label for r in select_two_central(regions, 1024, 1024)] == [2, 3]


def test_drop_minor_region_rule():
    big = _region(1, 4000, 0, 0)
    assert drop_minor_region([big, _region(2, 1200, 0, 0)]) == [big]
    assert len(drop_minor_region([big, _region(2, 1500, 0, 0)])) == 2
    assert len(drop_minor_region([_region(1, 30, 0, 0), _region(2, 10, 0, 0)])) == 2
    assert len(drop_minor_region([big, _region(2, 4000, 0, 0)])) == 2
    with pytest.raises(ValueError):
        drop_minor_region([big])


def test_mirror_bound_examples():
    one = _region(1, 1, 0, 0, (100, 200, 400, 800))
    assert mirror_bound([one], 1024).as_tuple() == (100, 200, 923, 800)
    two = [one, _region(2, 1, 0, 0, (620, 210, 920, 790))]
    assert mirror_bound(two, 1024).as_tuple() == (100, 200, 920, 800)
    with pytest.raises(SegmentationFailure):
        mirror_bound([], 1024)


def test_expand_box_examples():
    assert expand_box(BoundingBox(100, 120, 400, 500), 1024, 1024).as_tuple() == (85, 105, 415, 520)
    assert expand_box(BoundingBox(5, 3, 1020, 1015), 1024, 1024).as_tuple() == (0, 0, 1023, 1023)
    assert lrg.scaled_margins(512, 512) == (8, 8, 8, 10)
    assert expand_box(BoundingBox(100, 120, 400, 500), 512, 512).as_tuple() == (92, 112, 408, 510)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 300), st.integers(1, 300), st.data())
def test_expand_contains_and_clamps(w, h, data):
    x0 = data.draw(st.integers(0, w - 1))
    x1 = data.draw(st.integers(x0, w - 1))
    y0 = data.draw(st.integers(0, h - 1))
    y1 = data.draw(st.integers(y0, h - 1))
    box = BoundingBox(x0, y0, x1, y1)
    out = expand_box(box, w, h)
    assert out.contains(box) and out.within(w, h)
    full = BoundingBox(0, 0, w - 1, h - 1)
    assert expand_box(full, w, h) == full


def test_generate_matches_oracle():
    for m in random_lrg_masks(300, seed=8):
        box, status = lung_box(m)
        assert box.as_tuple() + (status,) == lrg_box(m)


def test_symmetric_mask_symmetric_box():
    m = np.zeros((40, 51), bool)
    m[5:30, 4:20] = True
    m |= m[:, ::-1]
    box, _ = lung_box(m)
    assert box.x0 + box.x1 == 50


def test_fallback_on_empty_mask():
    img = np.random.default_rng(0).random((12, 10))
    out = generate_lung_region(img, np.zeros((12, 10), bool))
    assert out.status == "fallback"
    assert np.array_equal(out.crop, img)
    with pytest.raises(ValueError):
        generate_lung_region(img, np.zeros((10, 10), bool))


def test_phantom_lungs_contained_and_spurious_blob_ignored():
    spec = PhantomSpec(extent=128, patients=3)
    for i in range(6):
        rec = make_record(spec, 1, i)
        clean = generate_lung_region(rec.image, rec.lung_mask)
        ys, xs = np.nonzero(rec.lung_mask)
        b = clean.box
        assert xs.min() >= b.x0 and xs.max() <= b.x1 and ys.min() >= b.y0 and ys.max() <= b.y1
        assert clean.crop.shape == (b.height, b.width)
        noisy = rec.lung_mask.copy()
        noisy[1:4, 1:4] = True
        dirty = generate_lung_region(rec.image, noisy)
        assert dirty.box == clean.box
        assert dirty.status.startswith("fp-removed")


def test_mirroring_recovers_missed_lung():
    spec = PhantomSpec(extent=128, misalignment_prob=0.0, patients=1)
    rec = make_record(spec, 2, 0)
    full, _ = lung_box(rec.lung_mask)
    half = rec.lung_mask.copy()
    half[:, 64:] = False
    box, status = lung_box(half)
    assert status == "mirrored"
    assert abs(box.x1 - full.x1) <= 3


def test_boxes_csv_round_trip(tmp_path):
    rows = [("img00000", BoundingBox(1, 2, 3, 4), "clean"),
            ("img00001", BoundingBox(0, 0, 9, 9), "fp-removed+mirrored")]
    lrg.write_boxes_csv(tmp_path / "b.csv", rows)
    back = lrg.read_boxes_csv(tmp_path / "b.csv")
    assert back == {i: (b, s) for i, b, s in rows}
