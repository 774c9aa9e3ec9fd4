import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradseg.components import BoundingBox3
from gradseg.nifti_io import LabelMask3
from gradseg.roi import RoiSet, boxes_from_prior, draw_face_offsets, perturb_box, rasterize
from oracles import box_union_count


@st.composite
def box_in_grid(draw, max_n=20):
    shape = tuple(draw(st.integers(1, max_n)) for _ in range(3))
    lo = tuple(draw(st.integers(0, n - 1)) for n in shape)
    hi = tuple(draw(st.integers(a, n - 1)) for a, n in zip(lo, shape))
    return shape, BoundingBox3(lo, hi, draw(st.sampled_from([1, 2])))


def test_zero_margins_identity(rng):
    b = BoundingBox3((3, 4, 5), (6, 7, 8), 1)
    assert perturb_box(b, (20, 20, 20), rng, 0, 0) == b


def test_corner_box_clamped(rng):
    shape = (10, 12, 14)
    b = BoundingBox3((0, 0, 0), (1, 1, 1), 2)
    out = perturb_box(b, shape, rng)
    assert out.lo == (0, 0, 0)
    assert out.contains(b) and out.within(shape)
    top = BoundingBox3((8, 10, 12), (9, 11, 13), 2)
    out = perturb_box(top, shape, rng)
    assert out.hi == (9, 11, 13)
    assert out.contains(top)


def test_seeded_expansion_matches_rng_trace():
    b = BoundingBox3((10, 10, 10), (20, 20, 20), 1)
    out1 = perturb_box(b, (64, 64, 64), np.random.default_rng(42))
    out2 = perturb_box(b, (64, 64, 64), np.random.default_rng(42))
    assert out1 == out2
    off = draw_face_offsets(np.random.default_rng(42), 2, 6)
    assert out1.lo == tuple(10 - off[0]) and out1.hi == tuple(20 + off[1])
    assert np.all((off >= 2) & (off <= 6))


def test_invalid_margins(rng):
    b = BoundingBox3((1, 1, 1), (2, 2, 2))
    with pytest.raises(ValueError):
        perturb_box(b, (5, 5, 5), rng, 3, 2)
    with pytest.raises(ValueError):
        perturb_box(b, (2, 5, 5), rng)


@settings(max_examples=100, deadline=None)
@given(box_in_grid(), st.integers(0, 6), st.integers(0, 4), st.integers(0, 2**32 - 1))
def test_perturb_properties(sb, lo_m, extra, seed):
    shape, b = sb
    out = perturb_box(b, shape, np.random.default_rng(seed), lo_m, lo_m + extra)
    assert out.contains(b) and out.within(shape)
    assert out.source_label == b.source_label
    for a in range(3):
        grow_lo, grow_hi = b.lo[a] - out.lo[a], out.hi[a] - b.hi[a]
        assert 0 <= grow_lo <= lo_m + extra
        assert 0 <= grow_hi <= lo_m + extra
        # unclamped faces moved by at least lo_margin
        if out.lo[a] > 0:
            assert grow_lo >= lo_m
        if out.hi[a] < shape[a] - 1:
            assert grow_hi >= lo_m


def test_boxes_from_prior_order_and_labels(rng):
    d = np.zeros((40, 40, 40), dtype=np.uint8)
    d[30:34, 30:34, 30:34] = 2
    d[5:10, 5:10, 5:10] = 1
    d[2:4, 20:23, 2:4] = 2
    rois = boxes_from_prior(LabelMask3(d), rng, seed=7)
    assert [b.source_label for b in rois.boxes] == [1, 2, 2]
    assert rois.boxes[1].contains(BoundingBox3((2, 20, 2), (3, 22, 3)))
    assert rois.seed == 7 and not rois.warnings


def test_empty_prior(rng):
    rois = boxes_from_prior(LabelMask3(np.zeros((5, 5, 5), np.uint8)), rng)
    assert rois.empty and rois.boxes == []
    assert any("empty prior" in w for w in rois.warnings)


def test_missing_gtvp_warns(rng):
    d = np.zeros((10, 10, 10), np.uint8)
    d[4, 4, 4] = 2
    rois = boxes_from_prior(LabelMask3(d), rng)
    assert [b.source_label for b in rois.boxes] == [2]
    assert rois.warnings == ["prior has no GTVp voxels"]


def test_boxes_cover_prior(rng):
    d = (rng.random((20, 20, 20)) < 0.05).astype(np.uint8) * rng.integers(1, 3, (20, 20, 20)).astype(np.uint8)
    rois = boxes_from_prior(LabelMask3(d), rng)
    cover = rasterize(rois)
    assert cover[d > 0].all()


def test_determinism():
    d = np.zeros((30, 30, 30), np.uint8)
    d[10:15, 10:15, 10:15] = 1
    d[20:22, 3:5, 3:5] = 2
    a = boxes_from_prior(LabelMask3(d), np.random.default_rng(5), seed=5)
    b = boxes_from_prior(LabelMask3(d), np.random.default_rng(5), seed=5)
    assert a.to_dict() == b.to_dict()


def test_rasterize_examples():
    r = RoiSet([BoundingBox3((0, 0, 0), (1, 1, 1))], (4, 4, 4))
    assert rasterize(r).sum() == 8
    r = RoiSet([BoundingBox3((0, 0, 0), (2, 2, 2)), BoundingBox3((1, 1, 1), (3, 3, 3))], (4, 4, 4))
    assert rasterize(r).sum() == 27 + 27 - 8
    assert rasterize(RoiSet([], (3, 3, 3))).sum() == 0


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_rasterize_inclusion_exclusion(seed, n):
    rng = np.random.default_rng(seed)
    shape = (12, 10, 8)
    boxes = []
    for _ in range(n):
        lo = [int(rng.integers(0, s)) for s in shape]
        hi = [int(rng.integers(a, s)) for a, s in zip(lo, shape)]
        boxes.append(BoundingBox3(lo, hi))
    assert int(rasterize(RoiSet(boxes, shape)).sum()) == box_union_count(boxes)


def test_json_round_trip(tmp_path, rng):
    d = np.zeros((20, 20, 20), np.uint8)
    d[5:8, 5:8, 5:8] = 1
    rois = boxes_from_prior(LabelMask3(d), rng, seed=3)
    rois.save(tmp_path / "r.json")
    back = RoiSet.load(tmp_path / "r.json")
    assert back.to_dict() == rois.to_dict()
    raw = (tmp_path / "r.json").read_text()
    assert '"lo"' in raw and '"hi"' in raw and '"label"' in raw and '"seed": 3' in raw
