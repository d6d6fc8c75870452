"""Binary morphology with square structuring elements, and Gaussian blur."""
import math

import numpy as np
from scipy import ndimage

from matting.shared.errors import MattingError


def _as_mask(m) -> np.ndarray:
    m = np.asarray(m, dtype=bool)
    if m.ndim != 2:
        raise MattingError(f"binary mask must be 2-D, got shape {m.shape}")
    return m


def _check_radius(k: int) -> int:
    if int(k) != k or k < 0:
        raise MattingError(f"structuring element radius must be a non-negative integer, got {k}")
    return int(k)


def erode(m, k: int, outside: bool = False) -> np.ndarray:
    """
    Pixel stays true iff every pixel within Chebyshev distance k is true.

    Pixels beyond the border count as ``outside`` (false by default, so masks
    shrink away from the image edge).
    """
    m = _as_mask(m)
    k = _check_radius(k)
    if k == 0:
        return m.copy()
    return ndimage.minimum_filter(m.astype(np.uint8), size=2 * k + 1, mode="constant", cval=int(outside)).astype(bool)


def dilate(m, k: int) -> np.ndarray:
    """Pixel becomes true iff any pixel within Chebyshev distance k is true."""
    m = _as_mask(m)
    k = _check_radius(k)
    if k == 0:
        return m.copy()
    return ndimage.maximum_filter(m.astype(np.uint8), size=2 * k + 1, mode="constant", cval=0).astype(bool)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian of radius ceil(3 sigma)."""
    if not sigma > 0:
        raise MattingError(f"gaussian sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_blur(img, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflected borders; result clipped to [0, 1]."""
    kernel = gaussian_kernel(sigma)
    img = np.asarray(img, dtype=np.float64)
    out = ndimage.correlate1d(img, kernel, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="reflect")
    return np.clip(out, 0.0, 1.0)
