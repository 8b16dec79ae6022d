"""Fine stage: histogram thresholding inside candidate blocks and defect attributes."""

import enum
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import ndimage

from .blockgrid import delta_planes

DEFAULT_BINS = 256
MIN_DEFECT_PX = 4

# Float objectives within this relative distance of the maximum are
# re-ranked in exact rational arithmetic.
_TIE_RTOL = 1e-9


class Channel(str, enum.Enum):
    DELTA_E = "delta_e"
    L_STAR = "l_star"


class Method(str, enum.Enum):
    OTSU = "otsu"
    VALLEY = "valley"


class Polarity(str, enum.Enum):
    LIGHT = "light"
    DARK = "dark"


class DegenerateHistogram(ValueError):
    pass


@dataclass
class Histogram:
    counts: np.ndarray
    value_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if np.any(self.counts < 0):
            raise ValueError("histogram counts must be non-negative")

    @property
    def bin_count(self):
        return self.counts.size

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def p(self):
        return self.counts / self.total

    @classmethod
    def from_values(cls, values, bins=DEFAULT_BINS, value_range=None):
        values = np.asarray(values, dtype=np.float64).ravel()
        lo, hi = value_range if value_range is not None else (values.min(), values.max())
        return cls(np.bincount(bin_index(values, lo, hi, bins), minlength=bins), (float(lo), float(hi)))

    def level_value(self, t):
        """Lower edge of level ``t`` in data units."""
        lo, hi = self.value_range
        return lo + (hi - lo) * t / self.bin_count


def bin_index(values, lo, hi, bins):
    if hi <= lo:
        return np.zeros(np.shape(values), dtype=np.int64)
    idx = np.floor((np.asarray(values) - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def _split_sums(h):
    counts = h.counts
    if np.count_nonzero(counts) < 2:
        raise DegenerateHistogram("histogram needs at least two non-empty levels")
    levels = np.arange(counts.size, dtype=np.int64)
    # lower class at split t holds the levels below t
    n1 = np.cumsum(counts) - counts
    s1 = np.cumsum(counts * levels) - counts * levels
    return counts, n1, s1, int(counts.sum()), int((counts * levels).sum())


def _exact_objective(n1, s1, n, s, weight_num=None):
    # N * (w1 mu1^2 + w2 mu2^2) == s1^2/n1 + s2^2/n2, empty classes contribute 0
    n2, s2 = n - n1, s - s1
    val = Fraction(0)
    if n1:
        val += Fraction(s1 * s1, n1)
    if n2:
        val += Fraction(s2 * s2, n2)
    if weight_num is not None:
        val *= Fraction(weight_num, n)
    return val


def _argmax(h, valley):
    counts, n1, s1, n, s = _split_sums(h)
    n2, s2 = n - n1, s - s1
    with np.errstate(divide="ignore", invalid="ignore"):
        obj = np.where(n1 > 0, s1.astype(float) ** 2 / n1, 0.0)
        obj += np.where(n2 > 0, s2.astype(float) ** 2 / np.where(n2 > 0, n2, 1), 0.0)
    if valley:
        obj *= (n - counts) / n
    best = obj.max()
    near = np.flatnonzero(obj >= best - _TIE_RTOL * abs(best))
    if near.size == 1:
        return int(near[0])
    exact = [
        _exact_objective(int(n1[t]), int(s1[t]), n, s, n - int(counts[t]) if valley else None)
        for t in near
    ]
    top = max(exact)
    return int(near[exact.index(top)])


def otsu_threshold(h):
    """Level maximising w1*mu1^2 + w2*mu2^2; ties go to the smallest level.

    Pixels at levels ``< t`` form the lower class, so ``t`` is the first
    level of the upper class.
    """
    return _argmax(h, valley=False)


def valley_emphasis_threshold(h):
    """Otsu objective weighted by ``1 - p(t)`` to favour histogram valleys.

    Same split convention as :func:`otsu_threshold`.
    """
    return _argmax(h, valley=True)


THRESHOLDS = {Method.OTSU: otsu_threshold, Method.VALLEY: valley_emphasis_threshold}


def largest_component(mask):
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return mask & False
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def segment_defect(L, a, b, validity, channel=Channel.DELTA_E, method=Method.VALLEY,
                   bins=DEFAULT_BINS, min_size=MIN_DEFECT_PX):
    """Mark the defect pixels of one block.

    ``L``, ``a``, ``b`` and ``validity`` are the block's planes. For the
    DeltaE channel the defect is the above-threshold side; for L* it is the
    smaller of the two classes (which is also the one farther from the block
    mean). Only the largest 8-connected component is kept, and components
    under ``min_size`` pixels yield an empty mask.
    """
    channel, method = Channel(channel), Method(method)
    empty = np.zeros(L.shape, dtype=bool)
    if validity.sum() < 2:
        return empty
    vL, va, vb = L[validity], a[validity], b[validity]
    if channel is Channel.DELTA_E:
        values, _ = delta_planes(vL, va, vb, vL.mean(), va.mean(), vb.mean())
        lo, hi = 0.0, float(values.max())
    else:
        values = vL
        lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return empty
    levels = bin_index(values, lo, hi, bins)
    h = Histogram(np.bincount(levels, minlength=bins), (lo, hi))
    try:
        t = THRESHOLDS[method](h)
    except DegenerateHistogram:
        return empty

    upper = levels >= t
    if channel is Channel.DELTA_E:
        side = upper
    else:
        n_up = int(upper.sum())
        side = upper if n_up < upper.size - n_up else ~upper
        if n_up * 2 == upper.size:
            # equal classes: pick the one farther from the mean
            mean = vL.mean()
            side = upper if abs(vL[upper].mean() - mean) >= abs(vL[~upper].mean() - mean) else ~upper
    mask = empty.copy()
    mask[validity] = side
    mask = largest_component(mask)
    if mask.sum() < min_size:
        return empty
    return mask


@dataclass
class DefectRegion:
    block_id: object
    mask: np.ndarray
    size_px: int
    polarity: Polarity
    major_axis_px: float
    minor_axis_px: float
    severity: float
    bbox: tuple
    origin: tuple = (0, 0)

    @property
    def pixel_coords(self):
        """(y, x) page coordinates of the defect pixels."""
        ys, xs = np.nonzero(self.mask)
        return ys + self.origin[1], xs + self.origin[0]


def ellipse_axes(mask):
    """Equivalent-ellipse axis lengths from second central moments.

    Each pixel is treated as a unit square, which adds 1/12 to both
    coordinate variances so single-pixel-wide regions keep a positive minor
    axis.
    """
    ys, xs = np.nonzero(mask)
    coords = np.stack([xs, ys]).astype(np.float64)
    cov = np.cov(coords, ddof=0) + np.eye(2) / 12.0
    evals = np.linalg.eigvalsh(cov)
    evals = np.clip(evals, 0.0, None)
    return 4.0 * np.sqrt(evals[1]), 4.0 * np.sqrt(evals[0])


def defect_attributes(mask, L, a, b, validity, means, block_id=None, origin=(0, 0)):
    """Size, polarity, ellipse axes, severity and page bbox of a defect mask.

    ``means`` is the block's (mean_L, mean_a, mean_b). Returns None when the
    background carries no colour difference (severity undefined).
    """
    mask = mask & validity
    size = int(mask.sum())
    if size == 0:
        raise ValueError("defect mask is empty")
    mean_L, mean_a, mean_b = means
    delta_e, _ = delta_planes(L, a, b, mean_L, mean_a, mean_b)
    background = validity & ~mask
    bg_sum = float(delta_e[background].sum())
    if not bg_sum > 0:
        return None
    severity = float(delta_e[mask].sum()) / bg_sum
    if not np.isfinite(severity):
        return None
    polarity = Polarity.LIGHT if L[mask].mean() > mean_L else Polarity.DARK
    major, minor = ellipse_axes(mask)
    ys, xs = np.nonzero(mask)
    ox, oy = origin
    bbox = (int(xs.min()) + ox, int(ys.min()) + oy, int(xs.max()) + 1 + ox, int(ys.max()) + 1 + oy)
    return DefectRegion(block_id, mask, size, polarity, float(major), float(minor), severity, bbox, origin)
