"""The 8 dihedral transforms of an axis-aligned raster.

Transform index k in 0..7 encodes an optional horizontal flip (k >= 4)
followed by k % 4 counter-clockwise quarter turns. Arrays are transformed
over their last two axes, so the same helpers serve (c, h, w) patches and
(n, c, h, w) batches.
"""

from __future__ import annotations

import numpy as np

TRANSFORM_COUNT = 8


def apply_transform(arr: np.ndarray, k: int) -> np.ndarray:
    if not 0 <= k < TRANSFORM_COUNT:
        raise ValueError(f"transform index must be in 0..7, got {k}")
    out = arr
    if k >= 4:
        out = np.flip(out, axis=-1)
    rot = k % 4
    if rot:
        out = np.rot90(out, rot, axes=(-2, -1))
    return np.ascontiguousarray(out)


def invert_transform(arr: np.ndarray, k: int) -> np.ndarray:
    if not 0 <= k < TRANSFORM_COUNT:
        raise ValueError(f"transform index must be in 0..7, got {k}")
    out = arr
    rot = k % 4
    if rot:
        out = np.rot90(out, -rot, axes=(-2, -1))
    if k >= 4:
        out = np.flip(out, axis=-1)
    return np.ascontiguousarray(out)
