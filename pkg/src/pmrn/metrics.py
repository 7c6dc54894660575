"""PSNR and SSIM on the BT.601 luma channel of 8-bit-quantized images.

Both metrics follow the evaluation convention of the super-resolution
benchmark literature: quantize both images to 8-bit levels, convert to the
Y channel (range [16, 235] on a 0..255 scale), shave a border of `shave`
pixels from every side (callers pass the upscale factor), then compare.

PSNR uses peak 255 and returns math.inf for identical inputs. SSIM uses an
11x11 Gaussian window with sigma 1.5, K1=0.01, K2=0.03, L=255, averaged
over valid window positions only (no padding).
"""

from __future__ import annotations

import math

import numpy as np

from .data import quantize

Y_OFFSET = 16.0
Y_COEFFS = (65.481, 128.553, 24.966)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 255.0


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """(3, h, w) float RGB in [0, 1] -> (h, w) float64 luma in [16, 235]."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3, h, w) image, got {img.shape}")
    r, g, b = img.astype(np.float64)
    return Y_OFFSET + Y_COEFFS[0] * r + Y_COEFFS[1] * g + Y_COEFFS[2] * b


def _prepare_pair(a: np.ndarray, b: np.ndarray, shave: int):
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if shave < 0:
        raise ValueError(f"shave must be >= 0, got {shave}")
    ya = rgb_to_y(quantize(a))
    yb = rgb_to_y(quantize(b))
    if shave:
        h, w = ya.shape
        if h <= 2 * shave or w <= 2 * shave:
            raise ValueError(f"shave {shave} leaves no pixels of {h}x{w}")
        ya = ya[shave : h - shave, shave : w - shave]
        yb = yb[shave : h - shave, shave : w - shave]
    return ya, yb


def psnr(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    """Peak signal-to-noise ratio in dB; math.inf when the images match."""
    ya, yb = _prepare_pair(a, b, shave)
    mse = float(np.mean((ya - yb) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _window_mean(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Valid-mode separable correlation with a 1-D window on both axes."""
    size = window.size
    h, w = img.shape
    rows = np.zeros((h - size + 1, w), dtype=np.float64)
    for t in range(size):
        rows += window[t] * img[t : t + h - size + 1, :]
    out = np.zeros((h - size + 1, w - size + 1), dtype=np.float64)
    for t in range(size):
        out += window[t] * rows[:, t : t + w - size + 1]
    return out


def ssim(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    """Mean structural similarity over valid 11x11 windows of the Y channel."""
    ya, yb = _prepare_pair(a, b, shave)
    if ya.shape[0] < SSIM_WINDOW or ya.shape[1] < SSIM_WINDOW:
        raise ValueError(
            f"image {ya.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    window = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2

    mu_a = _window_mean(ya, window)
    mu_b = _window_mean(yb, window)
    mu_aa = mu_a * mu_a
    mu_bb = mu_b * mu_b
    mu_ab = mu_a * mu_b
    var_a = _window_mean(ya * ya, window) - mu_aa
    var_b = _window_mean(yb * yb, window) - mu_bb
    cov = _window_mean(ya * yb, window) - mu_ab

    score = ((2.0 * mu_ab + c1) * (2.0 * cov + c2)) / (
        (mu_aa + mu_bb + c1) * (var_a + var_b + c2)
    )
    return float(score.mean())
