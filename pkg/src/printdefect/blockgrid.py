"""Block partitioning on two offset grids and per-block fluctuation metrics."""

import enum
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

logger = logging.getLogger(__name__)

BLOCK_SIZE = 75
GRID_SHIFT = 35
MIN_VALID_FRACTION = 0.5


class GridPass(enum.IntEnum):
    INITIAL = 0
    SHIFTED = 1


@dataclass(frozen=True, order=True)
class BlockId:
    grid_pass: GridPass
    row: int
    col: int

    def __str__(self):
        return f"{'IS'[self.grid_pass]}{self.row:03d}_{self.col:03d}"


@dataclass(frozen=True)
class Window:
    """A block window in page pixel coordinates (half-open ranges)."""

    id: BlockId
    x0: int
    x1: int
    y0: int
    y1: int

    @property
    def slices(self):
        return slice(self.y0, self.y1), slice(self.x0, self.x1)

    @property
    def area(self):
        return (self.x1 - self.x0) * (self.y1 - self.y0)


@dataclass
class BlockMetrics:
    id: BlockId
    x_range: tuple
    y_range: tuple
    mean_L: float
    mean_a: float
    mean_b: float
    mde: float
    dde: float
    mdl: float
    ddl: float
    valid_count: int
    region: int = 0

    @property
    def window(self):
        return Window(self.id, self.x_range[0], self.x_range[1], self.y_range[0], self.y_range[1])


def _edges(length, origin, size):
    edges = [0] if origin > 0 else []
    edges.extend(range(origin, length, size))
    edges.append(length)
    return [(lo, hi) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]


def grid_origin(grid_pass, shift=GRID_SHIFT):
    return 0 if grid_pass == GridPass.INITIAL else shift


def partition(raster, grid_pass, block_size=BLOCK_SIZE, shift=GRID_SHIFT,
              min_valid_fraction=MIN_VALID_FRACTION):
    """Tile the page from the pass origin into block windows.

    The shifted pass keeps the leading strips before its origin, and edge
    windows keep their true extent. Windows whose valid-pixel fraction is
    below ``min_valid_fraction`` are dropped. Row-major order.
    """
    start = grid_origin(grid_pass, shift) % block_size
    rows = _edges(raster.height, start, block_size)
    cols = _edges(raster.width, start, block_size)
    windows = []
    for r, (y0, y1) in enumerate(rows):
        for c, (x0, x1) in enumerate(cols):
            w = Window(BlockId(GridPass(grid_pass), r, c), x0, x1, y0, y1)
            n_valid = int(raster.validity[w.slices].sum())
            if n_valid > 0 and n_valid >= min_valid_fraction * w.area:
                windows.append(w)
    return windows


def shifted_mean(values):
    """Mean taken about the first value, exact for constant data."""
    return values[0] + (values - values[0]).mean()


def delta_planes(L, a, b, mean_L, mean_a, mean_b):
    """Per-pixel colour difference from the block mean and |dL|."""
    dL = L - mean_L
    delta_e = np.sqrt(dL ** 2 + (a - mean_a) ** 2 + (b - mean_b) ** 2)
    return delta_e, np.abs(dL)


def compute_metrics(raster, window, region=0, pixel_mask=None):
    """Block means and the MDE/DDE/MDL/DDL statistics over valid pixels.

    ``pixel_mask`` (window-shaped) further restricts the pixels used.
    Returns None when the window holds fewer than two valid pixels.
    """
    sl = window.slices
    valid = raster.validity[sl]
    if pixel_mask is not None:
        valid = valid & pixel_mask
    n = int(valid.sum())
    if n < 2:
        logger.info("block %s skipped: %d valid pixels", window.id, n)
        return None
    L, a, b = raster.L[sl][valid], raster.a[sl][valid], raster.b[sl][valid]
    mean_L, mean_a, mean_b = (shifted_mean(v) for v in (L, a, b))
    delta_e, delta_l = delta_planes(L, a, b, mean_L, mean_a, mean_b)
    return BlockMetrics(
        id=window.id,
        x_range=(window.x0, window.x1),
        y_range=(window.y0, window.y1),
        mean_L=float(mean_L),
        mean_a=float(mean_a),
        mean_b=float(mean_b),
        mde=float(delta_e.mean()),
        dde=float(delta_e.std(ddof=1)),
        mdl=float(delta_l.mean()),
        ddl=float(delta_l.std(ddof=1)),
        valid_count=n,
        region=region,
    )


def label_regions(validity):
    """Label 4-connected components of the validity mask (background = 0)."""
    labels, _ = ndimage.label(validity)
    return labels


def _majority_region(labels, window):
    vals = labels[window.slices].ravel()
    vals = vals[vals > 0]
    if vals.size == 0:
        return 0
    return int(np.bincount(vals).argmax())


def region_windows(raster, grid_pass, labels=None, block_size=BLOCK_SIZE, shift=GRID_SHIFT,
                   min_valid_fraction=MIN_VALID_FRACTION):
    """Windows of one pass with their majority region and that region's pixel mask.

    A window is kept when its majority region covers at least
    ``min_valid_fraction`` of the window.
    """
    if labels is None:
        labels = label_regions(raster.validity)
    out = []
    for w in partition(raster, grid_pass, block_size, shift, min_valid_fraction):
        region = _majority_region(labels, w)
        mask = labels[w.slices] == region
        if mask.sum() >= min_valid_fraction * w.area:
            out.append((w, region, mask))
    return out


def dual_pass_metrics(raster, block_size=BLOCK_SIZE, shift=GRID_SHIFT,
                      min_valid_fraction=MIN_VALID_FRACTION):
    """Metrics for every usable block of the initial and the shifted grid.

    Each block is tagged with the constant-tint region (4-connected
    component of the validity mask) holding most of its valid pixels, and
    only that region's pixels enter its statistics.
    """
    labels = label_regions(raster.validity)
    out = []
    for grid_pass in GridPass:
        for w, region, mask in region_windows(raster, grid_pass, labels, block_size, shift,
                                              min_valid_fraction):
            m = compute_metrics(raster, w, region=region, pixel_mask=mask)
            if m is not None:
                out.append(m)
    return out
