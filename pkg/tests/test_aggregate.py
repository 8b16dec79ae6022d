import json
import math
import random
from dataclasses import fields

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from printdefect.aggregate import (PageDefect, PageFeatureVector, boxes_touch, merge_defects,
                                   page_feature_vector, render_overlay)
from printdefect.segmentation import Polarity

SHAPE = (300, 400)
TABLE_FIELDS = {"n_defects", "n_gray", "n_solid", "size_mean", "size_max", "size_min", "size_std",
                "severity_mean", "severity_max", "severity_min", "centroid_mean_x_mm", "centroid_mean_y_mm"}


def box_defect(bbox, polarity="light", severity=0.1, dpi=600, shape=SHAPE):
    """A defect whose mask fills its bbox."""
    x0, y0, x1, y1 = bbox
    ys, xs = np.mgrid[y0:y1, x0:x1]
    flat = (ys * shape[1] + xs).ravel()
    return PageDefect(tuple(bbox), Polarity(polarity), flat.size, severity,
                      (float(xs.mean()), float(ys.mean())), dpi, frozenset(flat.tolist()), shape)


def test_same_spot_from_two_passes_merges_to_one():
    a = box_defect((100, 100, 120, 118))
    b = box_defect((102, 101, 121, 118))
    (m,) = merge_defects([a, b])
    assert m.bbox == (100, 100, 121, 118)
    assert m.size_px == len(a.pixels | b.pixels)


def test_opposite_polarity_never_merges():
    out = merge_defects([box_defect((10, 10, 30, 30), "light"), box_defect((15, 15, 35, 35), "dark")])
    assert len(out) == 2


def test_chain_of_three():
    boxes = [(0, 0, 10, 10), (10, 5, 20, 15), (20, 10, 30, 20)]  # each shares an edge with the next
    (m,) = merge_defects([box_defect(b, severity=s) for b, s in zip(boxes, (0.1, 0.2, 0.4))])
    assert m.bbox == (0, 0, 30, 20)
    assert m.severity == pytest.approx((0.1 + 0.2 + 0.4) / 3)  # equal areas


def test_touch_rule():
    assert boxes_touch((0, 0, 5, 5), (5, 5, 9, 9))  # corner
    assert boxes_touch((0, 0, 5, 5), (5, 0, 9, 5))  # edge
    assert not boxes_touch((0, 0, 5, 5), (6, 0, 9, 5))


def test_area_weighted_severity():
    a = box_defect((0, 0, 10, 10), severity=1.0)  # 100 px
    b = box_defect((20, 0, 30, 30), severity=0.0)  # 300 px
    c = box_defect((10, 0, 20, 1), severity=0.5)  # 10 px bridge
    (m,) = merge_defects([a, b, c])
    assert m.severity == pytest.approx((100 * 1.0 + 10 * 0.5) / 410)


def _random_boxes(r, n):
    out = []
    for _ in range(n):
        x0, y0 = r.randrange(0, 360), r.randrange(0, 260)
        out.append(box_defect((x0, y0, x0 + r.randrange(1, 40), y0 + r.randrange(1, 40)),
                              r.choice(["light", "dark"]), round(r.random(), 3)))
    return out


def _signature(defects):
    return [(d.polarity, d.bbox, d.size_px, round(d.severity, 12), d.pixels) for d in defects]


def _closure_oracle(defects):
    """Repeated pairwise fusion until no touching same-polarity pair remains."""
    groups = [[d] for d in defects]
    boxes = [d.bbox for d in defects]
    changed = True
    while changed:
        changed = False
        for i in range(len(groups)):
            for j in range(i + 1, len(groups)):
                if groups[i][0].polarity == groups[j][0].polarity and boxes_touch(boxes[i], boxes[j]):
                    groups[i] += groups.pop(j)
                    bi, bj = boxes[i], boxes.pop(j)
                    boxes[i] = (min(bi[0], bj[0]), min(bi[1], bj[1]), max(bi[2], bj[2]), max(bi[3], bj[3]))
                    changed = True
                    break
            if changed:
                break
    return sorted((g[0].polarity.value, boxes[k]) for k, g in enumerate(groups))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 25))
def test_merge_properties(seed, n):
    r = random.Random(seed)
    defects = _random_boxes(r, n)
    merged = merge_defects(defects)
    assert len(merged) <= n
    assert _signature(merge_defects(merged)) == _signature(merged)
    shuffled = defects[:]
    r.shuffle(shuffled)
    assert _signature(merge_defects(shuffled)) == _signature(merged)
    for i, a in enumerate(merged):
        for b in merged[i + 1:]:
            assert a.polarity != b.polarity or not boxes_touch(a.bbox, b.bbox)
    assert sorted((d.polarity.value, d.bbox) for d in merged) == _closure_oracle(defects)


def test_unit_conversion():
    d = PageDefect((0, 0, 10, 10), Polarity.DARK, 100, 0.2, (4.5, 4.5), 600)
    assert d.size_mm2 == pytest.approx(0.179, abs=0.001)
    assert d.size_mm2 == pytest.approx(100 * (25.4 / 600) ** 2, rel=1e-15)


def test_single_defect_vector():
    v = page_feature_vector([PageDefect((0, 0, 10, 10), Polarity.LIGHT, 100, 0.3, (4.5, 4.5), 600,
                                        page_shape=(600, 600))])
    assert v.size_std == 0
    assert v.size_min == v.size_mean == v.size_max == pytest.approx(0.179, abs=0.001)
    assert (v.n_defects, v.n_gray, v.n_solid) == (1, 1, 0)
    # centre of pixel 4 is 5 px from the page edge, 300 px from the centre
    assert v.centroid_mean_x_mm == pytest.approx(-295 * 25.4 / 600)


def test_empty_vector():
    v = page_feature_vector([])
    assert v.n_defects == 0
    d = json.loads(v.to_json())
    assert set(d) == TABLE_FIELDS
    assert all(d[k] is None for k in TABLE_FIELDS - {"n_defects", "n_gray", "n_solid"})


def test_vector_fields_and_serialisation():
    assert {f.name for f in fields(PageFeatureVector)} == TABLE_FIELDS
    v = page_feature_vector([box_defect((0, 0, 4, 4)), box_defect((50, 50, 60, 52), "dark")])
    header, row = v.to_csv().splitlines()
    assert header.split(",") == [f.name for f in fields(PageFeatureVector)]
    assert float(row.split(",")[3]) == v.size_mean


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 20), st.sampled_from([300, 600, 1200]))
def test_statistics_match_recomputation(seed, n, dpi):
    r = random.Random(seed)
    defects = []
    for _ in range(n):
        x0, y0 = r.randrange(0, 380), r.randrange(0, 280)
        defects.append(box_defect((x0, y0, x0 + r.randrange(1, 20), y0 + r.randrange(1, 20)),
                                  r.choice(["light", "dark"]), r.random(), dpi=dpi))
    v = page_feature_vector(defects)
    px = (25.4 / dpi)
    sizes = [d.size_px * px * px for d in defects]
    mean = math.fsum(sizes) / n
    std = math.sqrt(math.fsum((s - mean) ** 2 for s in sizes) / n)
    sev = [d.severity for d in defects]
    cx = [(d.centroid_px[0] + 0.5 - SHAPE[1] / 2) * px for d in defects]
    cy = [(d.centroid_px[1] + 0.5 - SHAPE[0] / 2) * px for d in defects]
    want = dict(n_defects=n, n_gray=sum(d.polarity == Polarity.LIGHT for d in defects),
                size_mean=mean, size_max=max(sizes), size_min=min(sizes), size_std=std,
                severity_mean=math.fsum(sev) / n, severity_max=max(sev), severity_min=min(sev),
                centroid_mean_x_mm=math.fsum(cx) / n, centroid_mean_y_mm=math.fsum(cy) / n)
    got = v.to_dict()
    for k, w in want.items():
        assert got[k] == pytest.approx(w, rel=1e-9, abs=1e-12), k
    assert v.n_gray + v.n_solid == n


def _gray_page():
    return np.full((200, 260, 3), 128, np.uint8)


def test_overlay_without_defects_is_identical():
    page = _gray_page()
    out = render_overlay(page, [])
    assert np.array_equal(out, page) and out is not page


def test_one_gray_spot_one_white_ring():
    page = _gray_page()
    out = render_overlay(page, [box_defect((50, 60, 70, 75), "light", shape=(200, 260))])
    white = np.all(out == 255, axis=2)
    assert np.array_equal(out[~white], page[~white])
    _, n = ndimage.label(white)
    assert n == 1
    ys, xs = np.nonzero(white)
    assert (xs.min(), ys.min(), xs.max() + 1, ys.max() + 1) == (48, 58, 72, 77)
    assert not white[60:75, 50:70].any()  # interior untouched
    assert white.sum() == 24 * 19 - 20 * 15


def test_rectangle_count_matches_merged_defects():
    shape = (200, 260)
    defects = merge_defects([box_defect(b, p, shape=shape) for b, p in
                             [((10, 10, 20, 20), "light"), ((15, 15, 25, 25), "light"),
                              ((100, 30, 120, 50), "dark"), ((200, 150, 215, 170), "light"),
                              ((60, 150, 80, 160), "dark")]])
    out = render_overlay(_gray_page(), defects)
    n_white = ndimage.label(np.all(out == 255, axis=2))[1]
    n_black = ndimage.label(np.all(out == 0, axis=2))[1]
    assert n_white + n_black == len(defects) == 4
    assert n_white == sum(d.polarity == Polarity.LIGHT for d in defects)


def test_overlay_clips_at_page_edge():
    out = render_overlay(_gray_page(), [box_defect((0, 0, 5, 5), "dark", shape=(200, 260))])
    assert np.all(out == 0, axis=2).sum() == 7 * 7 - 25
