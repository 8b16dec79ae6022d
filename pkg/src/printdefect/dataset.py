"""Blockwise dataset records, CSV persistence and ground-truth labelling."""

import csv
import json
import math
from dataclasses import dataclass, fields

import numpy as np

SCHEMA_TAG = "# printdefect-blocks v1"
HEADER = ("file,block_idx,color,x0,x1,y0,y1,mean_l,mean_a,mean_b,dde,mdl,ddl,label,"
          "polarity,size_px,major_px,minor_px,severity").split(",")
OVERLAP_FRACTION = 0.25


class DatasetError(ValueError):
    pass


@dataclass
class BlockRecord:
    """One block: page-level, block-level and (for candidates) defect fields.

    ``label`` is None for unlabelled blocks. The defect group (``polarity``
    through ``severity``) is either fully present or fully None.
    """

    file: str
    block_idx: str
    color: str
    x0: int
    x1: int
    y0: int
    y1: int
    mean_l: float
    mean_a: float
    mean_b: float
    dde: float
    mdl: float
    ddl: float
    label: int = None
    polarity: str = None
    size_px: int = None
    major_px: float = None
    minor_px: float = None
    severity: float = None

    def __post_init__(self):
        if self.label not in (None, 0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        group = [self.polarity, self.size_px, self.major_px, self.minor_px, self.severity]
        if any(v is None for v in group) and any(v is not None for v in group):
            raise ValueError("defect fields must be all present or all absent")

    @property
    def has_defect(self):
        return self.polarity is not None

    def features(self):
        """The seven tree inputs, in :data:`printdefect.classifier.FEATURE_NAMES` order."""
        if not self.has_defect:
            raise ValueError(f"block {self.block_idx} has no defect features")
        return [self.mdl, self.ddl, self.dde, float(self.size_px), self.major_px,
                self.minor_px, self.severity]


_INT_FIELDS = {"x0", "x1", "y0", "y1", "label", "size_px"}
_FLOAT_FIELDS = {"mean_l", "mean_a", "mean_b", "dde", "mdl", "ddl", "major_px", "minor_px", "severity"}


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(name, text):
    if text == "" and name not in ("file", "block_idx", "color"):
        return None
    if name in _INT_FIELDS:
        return int(text)
    if name in _FLOAT_FIELDS:
        return float(text)
    return text


def write_dataset(records, path):
    with open(path, "w", newline="") as fh:
        fh.write(SCHEMA_TAG + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for r in records:
            w.writerow([_fmt(getattr(r, name)) for name in HEADER])


def read_dataset(path):
    records = []
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\r\n")
        if first != SCHEMA_TAG:
            raise DatasetError(f"{path}:1: missing schema tag {SCHEMA_TAG!r}")
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}:2: missing header") from None
        if header != HEADER:
            raise DatasetError(f"{path}:2: unexpected header")
        for lineno, row in enumerate(reader, start=3):
            if not row:
                continue
            if len(row) != len(HEADER):
                raise DatasetError(f"{path}:{lineno}: expected {len(HEADER)} fields, got {len(row)}")
            try:
                records.append(BlockRecord(**{n: _parse(n, v) for n, v in zip(HEADER, row)}))
            except (TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    return records


def read_datasets(paths):
    out = []
    for p in paths:
        out.extend(read_dataset(p))
    return out


def training_arrays(records):
    """Feature matrix and labels of the labelled records carrying defect features."""
    rows = [r for r in records if r.has_defect and r.label is not None]
    X = np.array([r.features() for r in rows], dtype=np.float64).reshape(-1, 7)
    y = np.array([r.label for r in rows], dtype=np.int64)
    return X, y


def ellipse_mask(truth, shape):
    """Pixels (centres) inside a truth ellipse; see :mod:`printdefect.synthpage`.

    Returns (mask, (x0, y0)) where ``mask`` covers the ellipse bounding box
    clipped to the page. An ellipse too small to contain any pixel centre
    keeps its nearest pixel.
    """
    cx, cy = truth["center"]
    ra, rb = truth["axes"]
    th = math.radians(truth.get("angle", 0.0))
    ext = max(ra, rb)
    h, w = shape
    x0, x1 = max(int(math.floor(cx - ext)), 0), min(int(math.ceil(cx + ext)) + 1, w)
    y0, y1 = max(int(math.floor(cy - ext)), 0), min(int(math.ceil(cy + ext)) + 1, h)
    if x1 <= x0 or y1 <= y0:
        return np.zeros((0, 0), dtype=bool), (x0, y0)
    ys, xs = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    u = dx * math.cos(th) + dy * math.sin(th)
    v = -dx * math.sin(th) + dy * math.cos(th)
    mask = (u / ra) ** 2 + (v / rb) ** 2 <= 1.0
    if not mask.any():
        iy = min(max(int(round(cy)) - y0, 0), y1 - y0 - 1)
        ix = min(max(int(round(cx)) - x0, 0), x1 - x0 - 1)
        mask[iy, ix] = True
    return mask, (x0, y0)


def overlap_fraction(window, truth_mask, truth_origin):
    """Fraction of a truth region's pixels inside a half-open block window."""
    x0, x1, y0, y1 = window
    area = int(truth_mask.sum())
    if area == 0:
        return 0.0
    ox, oy = truth_origin
    h, w = truth_mask.shape
    sx0, sx1 = max(x0 - ox, 0), min(x1 - ox, w)
    sy0, sy1 = max(y0 - oy, 0), min(y1 - oy, h)
    if sx1 <= sx0 or sy1 <= sy0:
        return 0.0
    return float(truth_mask[sy0:sy1, sx0:sx1].sum()) / area


def label_from_ground_truth(records, truth, shape, min_fraction=OVERLAP_FRACTION):
    """Set ``label`` to 1 iff the block holds >= ``min_fraction`` of any truth region."""
    regions = [ellipse_mask(t, shape) for t in truth]
    for r in records:
        window = (r.x0, r.x1, r.y0, r.y1)
        r.label = int(any(overlap_fraction(window, m, o) >= min_fraction for m, o in regions))
    return records


def load_truth(path):
    with open(path) as fh:
        truth = json.load(fh)
    if not isinstance(truth, list):
        raise DatasetError(f"{path}: ground truth must be a JSON list")
    for t in truth:
        if t.get("polarity") not in ("light", "dark") or len(t.get("center", ())) != 2 \
                or len(t.get("axes", ())) != 2:
            raise DatasetError(f"{path}: malformed truth entry {t!r}")
    return truth


def save_truth(truth, path):
    with open(path, "w") as fh:
        json.dump(truth, fh, indent=2)
        fh.write("\n")


def record_fields():
    return [f.name for f in fields(BlockRecord)]
