"""ROI preprocessing: bilinear resize -> scale into [0, 1] -> Gaussian smoothing."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

from ..autodiff import Tensor
from .rasters import Raster, RasterError

SMOOTH_SIGMA = 0.5
SMOOTH_RADIUS = 2
MASK_THRESHOLD = 0.5


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres, source coordinate clamped to the valid range
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(img: np.ndarray, height: int, width: int | None = None) -> np.ndarray:
    """Bilinear resampling of a 2-d array with half-pixel-centre alignment."""
    width = height if width is None else width
    img = np.asarray(img, dtype=np.float64)
    if img.shape == (height, width):
        return img.copy()
    r0, r1, fr = _axis_weights(img.shape[0], height)
    c0, c1, fc = _axis_weights(img.shape[1], width)
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bottom = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bottom * fr[:, None]


def gaussian_kernel(sigma: float = SMOOTH_SIGMA, radius: int = SMOOTH_RADIUS) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(img: np.ndarray, sigma: float = SMOOTH_SIGMA,
                    radius: int = SMOOTH_RADIUS) -> np.ndarray:
    """Separable truncated Gaussian, mirrored borders (``d c b a | a b c d``)."""
    k = gaussian_kernel(sigma, radius)
    out = correlate1d(np.asarray(img, dtype=np.float64), k, axis=0, mode="reflect")
    return correlate1d(out, k, axis=1, mode="reflect")


def _validate(raw: Raster, target_resolution: int) -> None:
    if not isinstance(raw, Raster):
        raise RasterError("expected a decoded grayscale raster")
    if target_resolution < 1:
        raise ValueError(f"target_resolution must be positive, got {target_resolution}")


def preprocess(raw: Raster, target_resolution: int) -> Tensor:
    """``[1, R, R]`` image tensor in [0, 1]."""
    _validate(raw, target_resolution)
    img = resize_bilinear(raw.pixels, target_resolution)
    img = img / raw.maxval
    img = gaussian_smooth(img)
    return Tensor(np.clip(img, 0.0, 1.0)[None])


def binarize_mask(raw: Raster, target_resolution: int, threshold: float = MASK_THRESHOLD) -> Tensor:
    """Resize then threshold: value >= ``threshold`` (as a fraction of full scale) becomes 1."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    _validate(raw, target_resolution)
    img = resize_bilinear(raw.pixels, target_resolution) / raw.maxval
    return Tensor((img >= threshold).astype(np.float64)[None])
