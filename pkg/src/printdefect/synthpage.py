"""Synthetic halftoned test pages with injected gray and solid spots.

Ground truth is a list of dicts::

    {"polarity": "light" | "dark", "center": [x, y], "axes": [r_major, r_minor],
     "angle": degrees, "delta_l": float}

``center`` is in pixel-index coordinates (pixel ``(i, j)`` sits at
``x = i, y = j``), so the corner shared by pixels 74 and 75 is at 74.5.
``axes`` are the half-maximum semi-axes of the injected lightness profile in
pixels; the same schema is read by :mod:`printdefect.dataset`.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .imaging import DEFAULT_DPI, SrgbRaster, lab_to_srgb, srgb_to_lab

HALFTONE_CELL = 8
DOT_PERIOD = 4
_HALF_MAX = math.sqrt(2.0 * math.log(2.0))


@dataclass
class Region:
    rect: tuple  # (x0, y0, x1, y1), exclusive ends
    color: tuple  # sRGB tint
    cell: int = HALFTONE_CELL


@dataclass
class Spot:
    center: tuple
    radius: float
    delta_l: float
    radius_minor: float = None
    angle: float = 0.0

    @property
    def polarity(self):
        return "light" if self.delta_l > 0 else "dark"

    @property
    def axes(self):
        minor = self.radius if self.radius_minor is None else self.radius_minor
        return (max(self.radius, minor), min(self.radius, minor))


@dataclass
class PageSpec:
    width: int
    height: int
    regions: list
    defects: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    noise_sigma: float = 0.5
    dpi: int = DEFAULT_DPI
    seed: int = 0

    def validate(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("page size must be positive")
        for d in self.defects:
            if d.radius <= 0 or (d.radius_minor is not None and d.radius_minor <= 0):
                raise ValueError("spot radius must be positive")
            if d.delta_l == 0:
                raise ValueError("spot contrast must be nonzero")
            x, y = d.center
            if not any(r.rect[0] <= x < r.rect[2] and r.rect[1] <= y < r.rect[3] for r in self.regions):
                raise ValueError(f"spot at {d.center} lies outside every region")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["regions"] = [Region(tuple(r["rect"]), tuple(r["color"]), r.get("cell", HALFTONE_CELL))
                        for r in d.get("regions", [])]
        d["defects"] = [Spot(tuple(s["center"]), s["radius"], s["delta_l"], s.get("radius_minor"),
                             s.get("angle", 0.0)) for s in d.get("defects", [])]
        d["masks"] = [tuple(m) for m in d.get("masks", [])]
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def clustered_dot_order(cell=HALFTONE_CELL, dot_period=DOT_PERIOD):
    """Fill order of a clustered-dot threshold matrix of size ``cell``.

    The cell holds ``(cell // dot_period) ** 2`` dots on a square lattice of
    pitch ``dot_period``; every dot grows from its centre and the dots take
    turns, so the cell still renders ``cell * cell`` gray levels. Returns
    ranks 0..cell*cell-1; low ranks take ink first.
    """
    if cell % dot_period:
        raise ValueError("cell must be a multiple of dot_period")
    yy, xx = np.mgrid[0:cell, 0:cell]
    c = (dot_period - 1) / 2.0
    u, v = xx % dot_period, yy % dot_period
    dist = np.hypot(u - c, v - c)
    angle = np.arctan2(v - c, u - c)
    # Bayer order interleaves the dots so they grow in step
    n = cell // dot_period
    dot = (yy // dot_period) * n + (xx // dot_period)
    bayer = _bayer(n).ravel()[dot] if n > 1 else np.zeros_like(dot)
    order = np.lexsort((bayer.ravel(), np.round(angle.ravel(), 9), np.round(dist.ravel(), 9)))
    ranks = np.empty(cell * cell, dtype=np.int64)
    ranks[order] = np.arange(cell * cell)
    return ranks.reshape(cell, cell)


def _bayer(n):
    m = np.array([[0]])
    while m.shape[0] < n:
        m = np.block([[4 * m, 4 * m + 2], [4 * m + 3, 4 * m + 1]])
    return m[:n, :n]


def halftone(values, cell=HALFTONE_CELL, phase=(0, 0)):
    """Binary per-channel clustered-dot dither of sRGB code values."""
    ranks = clustered_dot_order(cell)
    h, w = values.shape[:2]
    ys = (np.arange(h) + phase[1]) % cell
    xs = (np.arange(w) + phase[0]) % cell
    thr = 255.0 * (1.0 - (ranks[np.ix_(ys, xs)] + 0.5) / (cell * cell))
    ink = values < thr[..., None]
    return np.where(ink, 0.0, 255.0)


def spot_profile(spot, xs, ys):
    """Unit-peak Gaussian whose half-maximum contour has the spot's semi-axes."""
    major, minor = spot.axes
    sig_a, sig_b = major / _HALF_MAX, minor / _HALF_MAX
    th = math.radians(spot.angle)
    dx, dy = xs - spot.center[0], ys - spot.center[1]
    u = dx * math.cos(th) + dy * math.sin(th)
    v = -dx * math.sin(th) + dy * math.cos(th)
    return np.exp(-0.5 * ((u / sig_a) ** 2 + (v / sig_b) ** 2))


def lightness_field(spec):
    """Pre-halftone L* offset field from all injected spots.

    Each profile is evaluated within 5 standard deviations of its centre.
    """
    field_ = np.zeros((spec.height, spec.width))
    for spot in spec.defects:
        ext = 5.0 * spot.axes[0] / _HALF_MAX
        cx, cy = spot.center
        x0, x1 = max(int(cx - ext), 0), min(int(cx + ext) + 2, spec.width)
        y0, y1 = max(int(cy - ext), 0), min(int(cy + ext) + 2, spec.height)
        if x1 <= x0 or y1 <= y0:
            continue
        ys, xs = np.mgrid[y0:y1, x0:x1].astype(np.float64)
        field_[y0:y1, x0:x1] += spot.delta_l * spot_profile(spot, xs, ys)
    return field_


def generate(spec):
    """Render a page and its ground truth.

    Returns
    -------
    raster : SrgbRaster
        uint8 pixels; validity is True inside regions and outside mask rects.
    truth : list of dict
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    pixels = np.full((spec.height, spec.width, 3), 255.0)
    validity = np.zeros((spec.height, spec.width), dtype=bool)
    dl = lightness_field(spec)
    for region in spec.regions:
        x0, y0, x1, y1 = region.rect
        sl = (slice(y0, y1), slice(x0, x1))
        tint = srgb_to_lab(np.asarray(region.color, dtype=np.float64))
        lab = np.empty((y1 - y0, x1 - x0, 3))
        lab[..., 0] = np.clip(tint[0] + dl[sl], 0.0, 100.0)
        lab[..., 1] = tint[1]
        lab[..., 2] = tint[2]
        contone = np.clip(lab_to_srgb(lab), 0.0, 255.0)
        pixels[sl] = halftone(contone, region.cell, phase=(x0, y0))
        validity[sl] = True
    for x0, y0, x1, y1 in spec.masks:
        validity[y0:y1, x0:x1] = False
    if spec.noise_sigma > 0:
        # 1 L* unit is roughly 2.55 code values
        pixels += rng.normal(0.0, spec.noise_sigma * 2.55, size=pixels.shape)
    out = np.clip(np.rint(pixels), 0, 255).astype(np.uint8)
    truth = [
        {"polarity": s.polarity, "center": [float(s.center[0]), float(s.center[1])],
         "axes": [float(s.axes[0]), float(s.axes[1])], "angle": float(s.angle),
         "delta_l": float(s.delta_l)}
        for s in spec.defects
    ]
    return SrgbRaster(out, validity, dpi=spec.dpi), truth


#: Tints used by :func:`random_spec`; moderate colours whose halftones stay
#: within the sRGB gamut after a +-10 L* offset.
TINTS = (
    (0, 160, 220),    # cyan
    (220, 60, 140),   # magenta
    (200, 60, 50),    # red
    (90, 160, 80),    # green
    (128, 128, 128),  # gray
    (70, 90, 170),    # blue
    (230, 200, 60),   # yellow
    (150, 110, 80),   # brown
)


def random_spec(seed, width=900, height=900, n_defects=10, radius=(10.0, 16.0),
                delta_l=(6.0, 10.0), n_regions=1, on_vertices=False, noise_sigma=0.5,
                block=75, min_gap=None, margin=None):
    """Random page layout with well-separated spots of random polarity.

    With ``on_vertices`` each spot centre sits on a vertex of the initial
    ``block``-pixel grid.
    """
    rng = np.random.default_rng(seed)
    if n_regions == 1:
        rects = [(0, 0, width, height)]
    else:
        half = height // n_regions
        rects = [(0, i * half, width, (i + 1) * half if i < n_regions - 1 else height)
                 for i in range(n_regions)]
        # 10-pixel unprinted gutter between regions
        rects = [(x0, y0 + (5 if i else 0), x1, y1 - (5 if i < n_regions - 1 else 0))
                 for i, (x0, y0, x1, y1) in enumerate(rects)]
    tints = rng.choice(len(TINTS), size=len(rects), replace=False)
    regions = [Region(r, TINTS[t]) for r, t in zip(rects, tints)]

    r_hi = radius[1]
    gap = 5.0 * r_hi if min_gap is None else min_gap
    margin = 2.0 * r_hi if margin is None else margin
    spots, tries = [], 0
    while len(spots) < n_defects:
        tries += 1
        if tries > 20000:
            raise ValueError("cannot place spots; page too small")
        rect = rects[rng.integers(len(rects))]
        if on_vertices:
            vx = np.arange(block, width, block) - 0.5
            vy = np.arange(block, height, block) - 0.5
            cx, cy = float(rng.choice(vx)), float(rng.choice(vy))
        else:
            cx = float(rng.uniform(rect[0] + margin, rect[2] - margin))
            cy = float(rng.uniform(rect[1] + margin, rect[3] - margin))
        if not (rect[0] + margin <= cx <= rect[2] - margin and rect[1] + margin <= cy <= rect[3] - margin):
            continue
        if any(math.hypot(cx - s.center[0], cy - s.center[1]) < gap for s in spots):
            continue
        r = float(rng.uniform(*radius))
        mag = float(rng.uniform(*delta_l))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        spots.append(Spot((cx, cy), r, sign * mag))
    return PageSpec(width, height, regions, spots, noise_sigma=noise_sigma, seed=int(seed))
