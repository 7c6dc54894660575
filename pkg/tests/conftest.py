"""Shared synthetic-image builders for the test suite.

Everything here is deterministic in (seed, size) so tests can regenerate
identical inputs without fixture plumbing.
"""

import numpy as np

from pmrn.data import bicubic_upscale, crop_to_multiple, degrade
from pmrn.metrics import psnr


def flat_image(value=0.5, size=32, channels=3):
    """Constant CHW float image."""
    return np.full((channels, size, size), value, dtype=np.float32)


def ramp_image(size=32):
    """Horizontal linear ramp, identical in all three channels."""
    row = np.linspace(0.0, 1.0, size, dtype=np.float32)
    return np.broadcast_to(row, (3, size, size)).copy()


def random_image(seed, size=32, channels=3):
    """Uniform noise in [0, 1)."""
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, size=(channels, size, size)).astype(np.float32)


def shape_image(seed, size=128):
    """Two-tone scene: dark ground, light rectangles and thin lines.

    All edges are sharp, which is where a learned upscaler can beat the
    bicubic kernel.
    """
    rng = np.random.default_rng(seed)
    dark = np.array([0.15, 0.15, 0.15])
    light = np.array([0.85, 0.85, 0.85])
    img = np.empty((3, size, size), dtype=np.float64)
    img[:] = dark[:, None, None]
    for _ in range(16):
        h = int(rng.integers(5, size // 3))
        w = int(rng.integers(5, size // 3))
        top = int(rng.integers(0, size - h))
        left = int(rng.integers(0, size - w))
        img[:, top:top + h, left:left + w] = light[:, None, None]
    for _ in range(8):
        t = int(rng.integers(1, 3))
        fill = light if rng.uniform() < 0.5 else dark
        if rng.uniform() < 0.5:
            row = int(rng.integers(0, size - t))
            img[:, row:row + t, :] = fill[:, None, None]
        else:
            col = int(rng.integers(0, size - t))
            img[:, :, col:col + t] = fill[:, None, None]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def blocky_image(seed, size=128):
    """Scene whose HR content is piecewise constant on the 2x2 grid.

    Generated at half resolution and nearest-upsampled, so every edge sits
    on an even pixel index. At scale 2 the mapping LR -> HR is then close
    to invertible and learnable within a short training budget, while the
    bicubic kernel still smears every edge.
    """
    base = shape_image(seed, size=size // 2)
    return np.repeat(np.repeat(base, 2, axis=1), 2, axis=2)


def bicubic_psnr(heldout, spec):
    """Mean Y-channel PSNR of plain bicubic upscaling over HR images."""
    scores = []
    for img in heldout:
        hr = crop_to_multiple(img, spec.scale)
        lr = degrade(hr, spec)
        up = bicubic_upscale(lr, spec.scale)
        scores.append(psnr(up, hr, shave=spec.scale))
    return float(np.mean(scores))
