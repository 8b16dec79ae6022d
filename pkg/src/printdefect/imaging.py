"""Page loading, masking, descreening and sRGB -> CIELAB conversion."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

DEFAULT_DPI = 600

#: Descreening kernel geometry.
KERNEL_SIZE = 12
KERNEL_SIGMA = 2.0

#: D65 reference white, 2 degree observer (Y normalised to 1).
D65_WHITE = np.array([0.95047, 1.0, 1.08883])

_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])

_SUPPORTED_MODES = {"RGB", "RGBA", "L", "LA", "P", "PA"}


class PageError(ValueError):
    """Raised when a page file cannot be used as input."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


@dataclass
class SrgbRaster:
    """A page in sRGB code values with a per-pixel validity mask.

    ``pixels`` has shape (height, width, 3). Values are 0..255; loaded pages
    are uint8, descreened pages are float64 so that the low-pass output is
    not re-quantised.
    """

    pixels: np.ndarray
    validity: np.ndarray
    dpi: int = DEFAULT_DPI

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError("pixels must have shape (height, width, 3)")
        if self.validity.shape != self.pixels.shape[:2]:
            raise ValueError("validity and pixels must have identical dimensions")
        if self.dpi <= 0:
            raise ValueError("dpi must be positive")
        self.validity = self.validity.astype(bool, copy=False)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass
class LabRaster:
    """A page as CIELAB planes (each of shape (height, width))."""

    L: np.ndarray
    a: np.ndarray
    b: np.ndarray
    validity: np.ndarray
    dpi: int = DEFAULT_DPI
    shape: tuple = field(init=False)

    def __post_init__(self):
        self.shape = self.L.shape
        if not (self.a.shape == self.b.shape == self.validity.shape == self.shape):
            raise ValueError("all planes must share dimensions")

    @property
    def height(self):
        return self.shape[0]

    @property
    def width(self):
        return self.shape[1]


def load_page(path, dpi=DEFAULT_DPI):
    """Read an 8-bit RGB(A) PNG; nonzero alpha marks pixels to analyse."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode not in _SUPPORTED_MODES:
                raise PageError(path, f"unsupported pixel format {mode!r} (need 8-bit RGB/RGBA)")
            if mode in ("P", "PA"):
                im = im.convert("RGBA")
            elif mode == "L":
                im = im.convert("RGB")
            elif mode == "LA":
                im = im.convert("RGBA")
            arr = np.asarray(im)
    except PageError:
        raise
    except (OSError, SyntaxError, ValueError) as exc:
        raise PageError(path, f"cannot decode image ({exc})") from exc

    if arr.shape[2] == 4:
        validity = arr[:, :, 3] != 0
    else:
        validity = np.ones(arr.shape[:2], dtype=bool)
    return SrgbRaster(np.ascontiguousarray(arr[:, :, :3]), validity, dpi=dpi)


def save_page(raster, path):
    """Write a raster as RGBA PNG with the validity mask in the alpha channel."""
    pixels = np.clip(np.rint(raster.pixels), 0, 255).astype(np.uint8)
    alpha = np.where(raster.validity, 255, 0).astype(np.uint8)
    Image.fromarray(np.dstack([pixels, alpha]), mode="RGBA").save(path)


def gaussian_kernel_1d(size=KERNEL_SIZE, sigma=KERNEL_SIGMA):
    """Normalised Gaussian taps sampled symmetrically about the kernel middle.

    For an even ``size`` there is no centre tap; tap ``k`` sits at offset
    ``k - (size - 1) / 2``.
    """
    offsets = np.arange(size) - (size - 1) / 2.0
    taps = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
    return taps / taps.sum()


def gaussian_kernel_2d(size=KERNEL_SIZE, sigma=KERNEL_SIGMA):
    g = gaussian_kernel_1d(size, sigma)
    return np.outer(g, g)


def _masked_filter(plane, weights, taps):
    num = plane * weights
    for axis in (0, 1):
        num = ndimage.correlate1d(num, taps, axis=axis, mode="constant", cval=0.0)
    return num


def descreen(raster, size=KERNEL_SIZE, sigma=KERNEL_SIGMA):
    """Low-pass each channel with a separable Gaussian to remove halftone dots.

    Sums run over valid, in-bounds pixels only and are renormalised by the
    kernel mass that actually fell on such pixels. Invalid pixels keep
    their original values.
    """
    taps = gaussian_kernel_1d(size, sigma)
    weights = raster.validity.astype(np.float64)
    if not weights.any():
        return SrgbRaster(raster.pixels.copy(), raster.validity.copy(), raster.dpi)

    norm = _masked_filter(np.ones_like(weights), weights, taps)
    out = raster.pixels.astype(np.float64)
    valid = raster.validity & (norm > 0)
    for c in range(3):
        filtered = _masked_filter(out[:, :, c], weights, taps)
        channel = out[:, :, c]
        channel[valid] = filtered[valid] / norm[valid]
    return SrgbRaster(out, raster.validity.copy(), raster.dpi)


def srgb_to_linear(values):
    """Undo the sRGB transfer curve; input scaled to [0, 1]."""
    values = np.asarray(values, dtype=np.float64)
    return np.where(values <= 0.04045, values / 12.92, ((values + 0.055) / 1.055) ** 2.4)


def _lab_f(t):
    delta = 6.0 / 29.0
    return np.where(t > delta ** 3, np.cbrt(t), t / (3 * delta ** 2) + 4.0 / 29.0)


def srgb_to_lab(rgb):
    """Convert an (..., 3) array of sRGB code values (0..255) to CIELAB."""
    linear = srgb_to_linear(np.asarray(rgb, dtype=np.float64) / 255.0)
    xyz = linear @ _SRGB_TO_XYZ.T
    f = _lab_f(xyz / D65_WHITE)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def lab_to_srgb(lab):
    """Inverse of :func:`srgb_to_lab`; returns unclipped code values."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    delta = 6.0 / 29.0
    f = np.stack([fx, fy, fz], axis=-1)
    xyz = np.where(f > delta, f ** 3, 3 * delta ** 2 * (f - 4.0 / 29.0)) * D65_WHITE
    linear = xyz @ np.linalg.inv(_SRGB_TO_XYZ).T
    linear = np.clip(linear, 0.0, None)
    encoded = np.where(linear <= 0.0031308, 12.92 * linear, 1.055 * linear ** (1 / 2.4) - 0.055)
    return encoded * 255.0


def to_lab(raster):
    """Convert a raster to CIELAB; invalid pixels are zeroed in all planes."""
    lab = srgb_to_lab(raster.pixels)
    lab[~raster.validity] = 0.0
    # guard the white point against round-off above 100
    L = np.clip(lab[..., 0], 0.0, 100.0)
    return LabRaster(L, lab[..., 1].copy(), lab[..., 2].copy(), raster.validity.copy(), raster.dpi)


def full_support(validity, size=KERNEL_SIZE):
    """Valid pixels whose whole descreening footprint is valid and in bounds.

    Near mask and page borders the renormalised kernel is one-sided and lets
    halftone ripple through, so block statistics use this narrower mask.
    The footprint matches :func:`descreen`: offsets ``-size//2`` to
    ``size - size//2 - 1`` on each axis.
    """
    validity = np.asarray(validity, dtype=bool)
    lo = size // 2
    hi = size - lo - 1
    padded = np.pad(validity, ((lo, hi), (lo, hi)), constant_values=False).astype(np.int64)
    integral = np.pad(padded.cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    h, w = validity.shape
    total = (integral[size:size + h, size:size + w] - integral[:h, size:size + w]
             - integral[size:size + h, :w] + integral[:h, :w])
    return total == size * size
