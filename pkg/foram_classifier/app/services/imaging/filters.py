"""Grayscale conversion, Gaussian smoothing and thresholding of plate images."""
from __future__ import annotations

import math
from typing import Literal, Union

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu

from ...core.errors import DegenerateHistogramError, ParameterError

# ITU-R BT.601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
OTSU_BINS = 256

ThresholdMethod = Union[Literal["otsu"], float]


def to_grayscale(pixels: np.ndarray) -> np.ndarray:
    """Return per-pixel luminance of an ``H x W x 3`` 8-bit image, scaled to [0, 1]."""
    rgb = np.asarray(pixels, dtype=np.float64)
    return (rgb @ LUMA_WEIGHTS) / 255.0


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian weights over ``[-ceil(3 sigma), ceil(3 sigma)]``."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_kernel(sigma: float) -> np.ndarray:
    """2-D kernel; the outer product of normalized 1-D weights is itself normalized."""
    k = gaussian_kernel1d(sigma)
    return np.outer(k, k)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Convolve with a normalized Gaussian, replicating edge pixels at the border.

    The kernel is separable, so two 1-D passes equal the dense 2-D convolution.
    """
    k = gaussian_kernel1d(sigma)
    out = ndimage.correlate1d(np.asarray(img, dtype=np.float64), k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def otsu_threshold(img: np.ndarray) -> float:
    """Otsu's threshold over 256 uniform bins on [0, 1]."""
    counts, edges = np.histogram(img, bins=OTSU_BINS, range=(0.0, 1.0))
    if np.count_nonzero(counts) < 2:
        raise DegenerateHistogramError("Otsu threshold undefined: image histogram has a single occupied bin")
    centers = (edges[:-1] + edges[1:]) / 2.0
    return float(threshold_otsu(hist=(counts, centers)))


def class_mean_gap(img: np.ndarray, mask: np.ndarray) -> float:
    """Mean intensity inside ``mask`` minus the mean outside; 0 when either side is empty."""
    img = np.asarray(img)
    if not mask.any() or mask.all():
        return 0.0
    return float(img[mask].mean() - img[~mask].mean())


def threshold(img: np.ndarray, method: ThresholdMethod = "otsu") -> np.ndarray:
    """Binary mask of pixels strictly brighter than the threshold."""
    if method == "otsu":
        t = otsu_threshold(img)
    else:
        t = float(method)
        if not 0.0 <= t <= 1.0:
            raise ParameterError(f"fixed threshold must lie in [0, 1], got {t}")
    return np.asarray(img) > t
