"""Page-level merging of block detections, the page feature vector and overlays."""

import csv
import io
import json
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .segmentation import Polarity

MM_PER_INCH = 25.4
STROKE_PX = 2
_STROKE_COLOR = {Polarity.LIGHT: 255, Polarity.DARK: 0}


@dataclass
class PageDefect:
    """A merged defect.

    ``bbox`` is ``(x0, y0, x1, y1)`` with exclusive ends. ``pixels`` holds
    the flat page indices of the union mask and is not serialised.
    """

    bbox: tuple
    polarity: Polarity
    size_px: int
    severity: float
    centroid_px: tuple
    dpi: int
    pixels: frozenset = frozenset()
    page_shape: tuple = (0, 0)

    @property
    def mm_per_px(self):
        return MM_PER_INCH / self.dpi

    @property
    def size_mm2(self):
        return self.size_px * self.mm_per_px ** 2

    @property
    def centroid_mm(self):
        """Offset of the centroid from the page centre (x right, y down)."""
        h, w = self.page_shape
        cx, cy = self.centroid_px
        return ((cx + 0.5 - w / 2) * self.mm_per_px, (cy + 0.5 - h / 2) * self.mm_per_px)

    def to_dict(self):
        return {
            "bbox": list(self.bbox),
            "polarity": self.polarity.value,
            "size_px": self.size_px,
            "size_mm2": self.size_mm2,
            "severity": self.severity,
            "centroid_mm": list(self.centroid_mm),
        }


def boxes_touch(a, b):
    """True when half-open boxes overlap or share an edge or corner."""
    return a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]


def _components(boxes, polarities):
    n = len(boxes)
    rows, cols = [], []
    for i in range(n):
        for j in range(i + 1, n):
            if polarities[i] == polarities[j] and boxes_touch(boxes[i], boxes[j]):
                rows.append(i)
                cols.append(j)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return labels


def _union_box(boxes):
    b = np.array(boxes)
    return (int(b[:, 0].min()), int(b[:, 1].min()), int(b[:, 2].max()), int(b[:, 3].max()))


def _combine(members, dpi, page_shape):
    pixels = frozenset().union(*(m.pixels for m in members))
    size = len(pixels)
    weights = np.array([m.size_px for m in members], dtype=np.float64)
    severity = float(np.dot(weights, [m.severity for m in members]) / weights.sum())
    flat = np.fromiter(pixels, dtype=np.int64, count=size)
    ys, xs = np.divmod(flat, page_shape[1])
    return PageDefect(
        bbox=_union_box([m.bbox for m in members]),
        polarity=members[0].polarity,
        size_px=size,
        severity=severity,
        centroid_px=(float(xs.mean()), float(ys.mean())),
        dpi=dpi,
        pixels=pixels,
        page_shape=page_shape,
    )


def as_page_defect(region, dpi, page_shape):
    """Lift a block-level region to a single-member page defect."""
    ys, xs = region.pixel_coords
    flat = ys.astype(np.int64) * page_shape[1] + xs
    return PageDefect(
        bbox=tuple(region.bbox),
        polarity=Polarity(region.polarity),
        size_px=int(region.size_px),
        severity=float(region.severity),
        centroid_px=(float(xs.mean()), float(ys.mean())),
        dpi=dpi,
        pixels=frozenset(flat.tolist()),
        page_shape=tuple(page_shape),
    )


def merge_defects(defects):
    """Connected-components merge of same-polarity touching boxes.

    Repeated until no two same-polarity boxes touch, so the result is a
    fixed point. Output is sorted by (polarity, bbox).
    """
    current = sorted(defects, key=_sort_key)
    while True:
        if not current:
            return []
        labels = _components([d.bbox for d in current], [d.polarity for d in current])
        if labels.max() + 1 == len(current):
            return current
        groups = {}
        for d, lab in zip(current, labels):
            groups.setdefault(lab, []).append(d)
        dpi, shape = current[0].dpi, current[0].page_shape
        current = sorted((_combine(sorted(g, key=_sort_key), dpi, shape) for g in groups.values()),
                         key=_sort_key)


def _sort_key(d):
    return (d.polarity.value, d.bbox, d.size_px, d.severity)


def merge_detections(regions, dpi, page_shape):
    """Merge accepted block regions from both grid passes into page defects."""
    return merge_defects([as_page_defect(r, dpi, page_shape) for r in regions])


@dataclass
class PageFeatureVector:
    n_defects: int
    n_gray: int
    n_solid: int
    size_mean: float = None
    size_max: float = None
    size_min: float = None
    size_std: float = None
    severity_mean: float = None
    severity_max: float = None
    severity_min: float = None
    centroid_mean_x_mm: float = None
    centroid_mean_y_mm: float = None

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = [f.name for f in fields(self)]
        w.writerow(names)
        w.writerow(["" if getattr(self, n) is None else repr(getattr(self, n)) for n in names])
        return buf.getvalue()


def page_feature_vector(defects):
    """Summary statistics over the page's defects; sizes in mm^2.

    The size spread is the population standard deviation. Statistics are
    None for a page without defects.
    """
    n_gray = sum(d.polarity == Polarity.LIGHT for d in defects)
    n_solid = sum(d.polarity == Polarity.DARK for d in defects)
    if not defects:
        return PageFeatureVector(0, 0, 0)
    sizes = np.array([d.size_mm2 for d in defects])
    sev = np.array([d.severity for d in defects])
    cent = np.array([d.centroid_mm for d in defects])
    return PageFeatureVector(
        n_defects=len(defects),
        n_gray=int(n_gray),
        n_solid=int(n_solid),
        size_mean=float(sizes.mean()),
        size_max=float(sizes.max()),
        size_min=float(sizes.min()),
        size_std=float(sizes.std()),
        severity_mean=float(sev.mean()),
        severity_max=float(sev.max()),
        severity_min=float(sev.min()),
        centroid_mean_x_mm=float(cent[:, 0].mean()),
        centroid_mean_y_mm=float(cent[:, 1].mean()),
    )


def render_overlay(pixels, defects, stroke=STROKE_PX):
    """Draw each defect's box on a copy of ``pixels`` (H, W, 3).

    The stroke lies just outside the bbox, clipped to the page; white for
    gray spots, black for solid spots.
    """
    out = np.array(pixels, dtype=np.uint8, copy=True)
    h, w = out.shape[:2]
    for d in defects:
        x0, y0, x1, y1 = d.bbox
        ox0, oy0 = max(x0 - stroke, 0), max(y0 - stroke, 0)
        ox1, oy1 = min(x1 + stroke, w), min(y1 + stroke, h)
        ring = np.ones((oy1 - oy0, ox1 - ox0), dtype=bool)
        ring[y0 - oy0:y1 - oy0, x0 - ox0:x1 - ox0] = False
        out[oy0:oy1, ox0:ox1][ring] = _STROKE_COLOR[d.polarity]
    return out
