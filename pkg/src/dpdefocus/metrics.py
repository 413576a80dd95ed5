"""Reference-based image quality metrics and residual-map diagnostics.

All metrics take two images of identical shape with samples in [0, 1]
(peak value 1.0) and accumulate in float64. Color images are handled as
documented per metric.
"""

from __future__ import annotations

import numpy as np
from scipy import signal

from .imgcore import as_image, check_same_shape, clamp01

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def to_gray(img: np.ndarray) -> np.ndarray:
    """Channel-mean grayscale of a (H, W[, 3]) image, as float64."""
    a = np.asarray(img, dtype=np.float64)
    return a.mean(axis=2) if a.ndim == 3 else a


def mae(a, b) -> float:
    """Mean absolute error between two images.

    Parameters
    ----------
    a, b : array_like
        Images of identical shape.

    Returns
    -------
    float
        Mean over all samples of ``|a - b|``.
    """
    a = as_image(a, "a")
    b = as_image(b, "b")
    check_same_shape(a, b, "mae")
    return float(np.mean(np.abs(a.astype(np.float64) - b.astype(np.float64))))


def mse(a, b) -> float:
    """Mean squared error between two images (peak value 1.0)."""
    a = as_image(a, "a")
    b = as_image(b, "b")
    check_same_shape(a, b, "mse")
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(d * d))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in decibels, peak value 1.0.

    Returns ``10 * log10(1 / MSE)``, capped at 100 dB so that identical
    images produce a finite report value.
    """
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / err), PSNR_CAP_DB))


def _ssim_window() -> np.ndarray:
    r = SSIM_WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    w1 = np.exp(-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    w = np.outer(w1, w1)
    return w / w.sum()


def ssim(a, b) -> float:
    """Mean structural similarity over valid window positions.

    Uses the standard 11x11 Gaussian window (sigma 1.5) with K1 = 0.01 and
    K2 = 0.03 at peak value 1.0. Color inputs are converted to grayscale by
    the channel mean before comparison.

    Returns
    -------
    float
        Mean local SSIM, in [-1, 1].
    """
    a = as_image(a, "a")
    b = as_image(b, "b")
    check_same_shape(a, b, "ssim")
    x = to_gray(a)
    y = to_gray(b)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(
            f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    w = _ssim_window()

    def filt(z):
        return signal.fftconvolve(z, w, mode="valid")

    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mu_x = filt(x)
    mu_y = filt(y)
    var_x = filt(x * x) - mu_x * mu_x
    var_y = filt(y * y) - mu_y * mu_y
    cov = filt(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def residual_map(a, b, gain: float) -> np.ndarray:
    """Gain-amplified absolute residual, clamped into [0, 1].

    Computes ``clamp(gain * |a - b|, 0, 1)`` per sample; useful for
    visualizing where two images differ.
    """
    a = as_image(a, "a")
    b = as_image(b, "b")
    check_same_shape(a, b, "residual_map")
    if gain <= 0:
        raise ValueError(f"gain must be > 0, got {gain}")
    d = np.abs(a.astype(np.float64) - b.astype(np.float64))
    return clamp01(gain * d)
