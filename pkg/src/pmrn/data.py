"""Image I/O, bicubic resampling, degradation pipelines, patch sampling.

Two array layouts are used throughout the package:

  * storage form: uint8, shape (h, w, 3), what files hold;
  * working form: float32, shape (3, h, w), values in [0, 1], what the
    model consumes.

Conversion between them is round(x * 255) clamped to [0, 255], and all
spatial operations here act on the last two axes so they work on single
images and batches alike.

PNG files go through Pillow; PPM (P6) is read and written directly so the
test suite has a dependency-free pixel-exact path.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image as PilImage

from .dihedral import apply_transform

IMAGE_EXTENSIONS = (".png", ".ppm")


# ---------------------------------------------------------------------------
# layout conversion

def to_float(img_u8: np.ndarray) -> np.ndarray:
    """(h, w, 3) uint8 -> (3, h, w) float32 in [0, 1]."""
    if img_u8.ndim != 3 or img_u8.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) image, got {img_u8.shape}")
    return np.ascontiguousarray(img_u8.transpose(2, 0, 1)).astype(np.float32) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    """(3, h, w) float -> (h, w, 3) uint8, round(x*255) clamped."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3, h, w) image, got {img.shape}")
    q = np.clip(np.rint(img.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(q.transpose(1, 2, 0))


def quantize(img: np.ndarray) -> np.ndarray:
    """Round-trip a float image through 8-bit levels, keeping float layout."""
    return to_float(to_uint8(img))


# ---------------------------------------------------------------------------
# file I/O

def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] != b"P6":
        raise ValueError(f"{path}: not a P6 PPM file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    data = np.frombuffer(blob, dtype=np.uint8, count=width * height * 3, offset=pos)
    if data.size != width * height * 3:
        raise ValueError(f"{path}: truncated pixel data")
    return data.reshape(height, width, 3).copy()


def write_ppm(path, img_u8: np.ndarray) -> None:
    if img_u8.ndim != 3 or img_u8.shape[2] != 3 or img_u8.dtype != np.uint8:
        raise ValueError(f"PPM writer needs (h, w, 3) uint8, got {img_u8.shape}")
    h, w = img_u8.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img_u8).tobytes())


def read_image(path) -> np.ndarray:
    """Read PNG or PPM as (h, w, 3) uint8 RGB."""
    if str(path).lower().endswith(".ppm"):
        return read_ppm(path)
    with PilImage.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_image(path, arr: np.ndarray) -> None:
    """Write uint8 RGB (h, w, 3) or grayscale (h, w) to PNG/PPM."""
    if arr.dtype != np.uint8:
        raise ValueError(f"image writer needs uint8, got {arr.dtype}")
    if str(path).lower().endswith(".ppm"):
        write_ppm(path, arr)
        return
    mode = "L" if arr.ndim == 2 else "RGB"
    PilImage.fromarray(arr, mode=mode).save(path, format="PNG")


def read_image_float(path) -> np.ndarray:
    return to_float(read_image(path))


def list_images(directory) -> list:
    names = sorted(
        n for n in os.listdir(directory)
        if n.lower().endswith(IMAGE_EXTENSIONS)
    )
    if not names:
        raise ValueError(f"{directory}: no {'/'.join(IMAGE_EXTENSIONS)} images found")
    return [os.path.join(directory, n) for n in names]


# ---------------------------------------------------------------------------
# bicubic resampling

_CUBIC_A = -0.5


def _cubic_kernel(x: np.ndarray) -> np.ndarray:
    """Keys cubic convolution kernel with a = -0.5."""
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    a = _CUBIC_A
    near = (a + 2.0) * ax3 - (a + 3.0) * ax2 + 1.0
    far = a * ax3 - 5.0 * a * ax2 + 8.0 * a * ax - 4.0 * a
    return np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))


def _resize_weights(in_size: int, out_size: int):
    """Per-output tap indices and normalized weights along one axis.

    Output sample i maps to source coordinate (i + 0.5) * in/out - 0.5.
    On downscale the kernel is stretched by the scale factor (antialias),
    on upscale it keeps its natural width. Out-of-range taps clamp to the
    border, and each row of weights is normalized to sum to 1.
    """
    scale = in_size / out_size
    stretch = max(scale, 1.0)
    radius = int(np.ceil(2.0 * stretch))
    centers = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    base = np.floor(centers).astype(np.int64) - radius + 1
    offsets = np.arange(2 * radius, dtype=np.int64)
    taps = base[:, None] + offsets[None, :]
    weights = _cubic_kernel((centers[:, None] - taps) / stretch) / stretch
    weights /= weights.sum(axis=1, keepdims=True)
    taps = np.clip(taps, 0, in_size - 1)
    return taps, weights


def _resize_axis(arr: np.ndarray, out_size: int, axis: int) -> np.ndarray:
    in_size = arr.shape[axis]
    if in_size == out_size:
        return arr
    taps, weights = _resize_weights(in_size, out_size)
    moved = np.moveaxis(arr, axis, -1)
    gathered = moved[..., taps]  # (..., out_size, 2*radius)
    out = np.einsum("...ot,ot->...o", gathered, weights)
    return np.moveaxis(out, -1, axis)


def bicubic_resize(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Separable bicubic resize of the last two axes (h, w) of a float array."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be positive, got {out_w}x{out_h}")
    work = img.astype(np.float64, copy=False)
    work = _resize_axis(work, out_h, img.ndim - 2)
    work = _resize_axis(work, out_w, img.ndim - 1)
    return work.astype(np.float32)


def bicubic_upscale(img: np.ndarray, scale: int) -> np.ndarray:
    return bicubic_resize(img, img.shape[-1] * scale, img.shape[-2] * scale)


# ---------------------------------------------------------------------------
# degradation

BD_KERNEL_SIZE = 7
BD_SIGMA = 1.6


@dataclass(frozen=True)
class DegradationSpec:
    """How HR images become LR: plain bicubic (BI) or blur-then-subsample (BD)."""

    kind: str = "BI"
    scale: int = 4

    def __post_init__(self):
        if self.kind not in ("BI", "BD"):
            raise ValueError(f"degradation kind must be BI or BD, got {self.kind!r}")
        if self.kind == "BD" and self.scale != 3:
            raise ValueError("BD degradation is defined only for scale 3")


def gaussian_kernel(size: int = BD_KERNEL_SIZE, sigma: float = BD_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _blur_reflect(img: np.ndarray, size: int, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with mirror (reflect) borders on (..., h, w)."""
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    g /= g.sum()
    pad = size // 2
    spec = [(0, 0)] * (img.ndim - 2) + [(pad, pad), (pad, pad)]
    padded = np.pad(img.astype(np.float64), spec, mode="reflect")
    h, w = img.shape[-2], img.shape[-1]
    rows = np.zeros(img.shape[:-2] + (h, w + 2 * pad), dtype=np.float64)
    for t in range(size):
        rows += g[t] * padded[..., t : t + h, :]
    out = np.zeros(img.shape, dtype=np.float64)
    for t in range(size):
        out += g[t] * rows[..., :, t : t + w]
    return out.astype(np.float32)


def crop_to_multiple(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = img.shape[-2], img.shape[-1]
    return img[..., : h - h % scale, : w - w % scale]


def degrade(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """HR float image (..., h, w) -> LR at 1/scale; crops to a multiple first."""
    hr = crop_to_multiple(img, spec.scale)
    h, w = hr.shape[-2], hr.shape[-1]
    if h < spec.scale or w < spec.scale:
        raise ValueError(f"image {img.shape} too small for scale {spec.scale}")
    if spec.kind == "BI":
        return bicubic_resize(hr, w // spec.scale, h // spec.scale)
    blurred = _blur_reflect(hr, BD_KERNEL_SIZE, BD_SIGMA)
    return np.ascontiguousarray(blurred[..., :: spec.scale, :: spec.scale])


# ---------------------------------------------------------------------------
# patch sampling

@dataclass(frozen=True)
class PatchPair:
    """Aligned LR/HR training crop; HR offsets are scale * LR offsets."""

    lr: np.ndarray
    hr: np.ndarray
    image_id: int
    top: int
    left: int


def extract_pair(lr_img, hr_img, scale: int, p: int, top: int, left: int,
                 image_id: int = 0) -> PatchPair:
    lr = np.ascontiguousarray(lr_img[..., top : top + p, left : left + p])
    hr = np.ascontiguousarray(
        hr_img[..., scale * top : scale * (top + p), scale * left : scale * (left + p)]
    )
    return PatchPair(lr=lr, hr=hr, image_id=image_id, top=top, left=left)


def sample_patches(hr_img: np.ndarray, spec: DegradationSpec, p: int,
                   count: int, seed: int, image_id: int = 0) -> list:
    """Uniform random aligned LR/HR crops from one HR image."""
    hr = crop_to_multiple(hr_img, spec.scale)
    lr = degrade(hr, spec)
    h_lr, w_lr = lr.shape[-2], lr.shape[-1]
    if h_lr < p or w_lr < p:
        raise ValueError(
            f"LR size {h_lr}x{w_lr} cannot hold a {p}x{p} patch"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    pairs = []
    for _ in range(count):
        top = int(rng.integers(0, h_lr - p + 1))
        left = int(rng.integers(0, w_lr - p + 1))
        pairs.append(extract_pair(lr, hr, spec.scale, p, top, left, image_id))
    return pairs


def augment(pair: PatchPair, seed: int) -> PatchPair:
    """One of the 8 flip/rotation transforms, applied identically to LR and HR."""
    rng = np.random.Generator(np.random.PCG64(seed))
    k = int(rng.integers(0, 8))
    return PatchPair(
        lr=np.ascontiguousarray(apply_transform(pair.lr, k)),
        hr=np.ascontiguousarray(apply_transform(pair.hr, k)),
        image_id=pair.image_id,
        top=pair.top,
        left=pair.left,
    )
