"""Image I/O, resampling, degradation, and patch sampling."""

import math

import numpy as np
import pytest

from pmrn.data import (
    DegradationSpec,
    augment,
    bicubic_resize,
    bicubic_upscale,
    crop_to_multiple,
    degrade,
    extract_pair,
    gaussian_kernel,
    list_images,
    quantize,
    read_image,
    read_image_float,
    read_ppm,
    sample_patches,
    to_float,
    to_uint8,
    write_image,
    write_ppm,
)
from pmrn.dihedral import apply_transform

from conftest import flat_image, ramp_image, random_image


# ---------------------------------------------------------------------------
# value conversions

def test_uint8_round_trip_is_exact():
    levels = np.arange(768, dtype=np.uint8).reshape(16, 16, 3)
    assert np.array_equal(to_uint8(to_float(levels)), levels)


def test_to_uint8_rounds_and_clamps():
    col = np.array([-0.2, 0.0, 0.5019607, 1.0, 1.7], dtype=np.float32)
    img = np.broadcast_to(col[None, None, :], (3, 1, 5)).copy()
    assert to_uint8(img)[0, :, 0].tolist() == [0, 0, 128, 255, 255]


def test_quantize_is_idempotent():
    img = random_image(0, size=16)
    q = quantize(img)
    assert np.array_equal(quantize(q), q)
    assert np.max(np.abs(q - img)) <= 0.5 / 255.0 + 1e-7


# ---------------------------------------------------------------------------
# file formats

class TestPpm:
    def test_round_trip(self, tmp_path):
        img = to_uint8(random_image(1, size=9))
        path = tmp_path / "img.ppm"
        write_ppm(path, img)
        assert np.array_equal(read_ppm(path), img)

    def test_comments_are_skipped(self, tmp_path):
        path = tmp_path / "img.ppm"
        payload = bytes(range(12))
        path.write_bytes(b"P6\n# a comment\n2 2\n# another\n255\n" + payload)
        img = read_ppm(path)
        assert img.shape == (2, 2, 3)
        assert img.tobytes() == payload

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "img.ppm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes(4))
        with pytest.raises(ValueError):
            read_ppm(path)

    def test_rejects_16bit_maxval(self, tmp_path):
        path = tmp_path / "img.ppm"
        path.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
        with pytest.raises(ValueError):
            read_ppm(path)

    def test_rejects_short_payload(self, tmp_path):
        path = tmp_path / "img.ppm"
        path.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
        with pytest.raises(ValueError):
            read_ppm(path)


class TestPng:
    def test_round_trip(self, tmp_path):
        img = to_uint8(random_image(2, size=11))
        path = tmp_path / "img.png"
        write_image(path, img)
        assert np.array_equal(read_image(path), img)

    def test_read_image_float_scales(self, tmp_path):
        img = to_uint8(random_image(3, size=7))
        path = tmp_path / "img.png"
        write_image(path, img)
        assert np.allclose(read_image_float(path), to_float(img))

    def test_grayscale_write_reads_back_as_rgb(self, tmp_path):
        gray = np.arange(64, dtype=np.uint8).reshape(8, 8)
        path = tmp_path / "g.png"
        write_image(path, gray)
        back = read_image(path)  # readers always hand out RGB
        assert back.shape == (8, 8, 3)
        for c in range(3):
            assert np.array_equal(back[:, :, c], gray)


def test_list_images_filters_and_sorts(tmp_path):
    for name in ("b.png", "a.ppm", "c.txt", "d.PNG"):
        (tmp_path / name).write_bytes(b"")
    names = [p.name for p in map(__import__("pathlib").Path, list_images(tmp_path))]
    assert names == ["a.ppm", "b.png", "d.PNG"]


# ---------------------------------------------------------------------------
# bicubic resampling

def cubic(x):
    # Keys kernel, a = -0.5
    x = abs(x)
    if x < 1:
        return 1.5 * x**3 - 2.5 * x**2 + 1
    if x < 2:
        return -0.5 * x**3 + 2.5 * x**2 - 4 * x + 2
    return 0.0


def resize_axis_loops(arr, out_size):
    """Per-pixel tap loop mirroring the documented convention: center-aligned
    sampling, kernel stretched by max(in/out, 1), taps clamped to the edge
    after weighting, weights normalized."""
    in_size = arr.shape[-1]
    if in_size == out_size:
        return arr.astype(np.float64)
    stretch = max(in_size / out_size, 1.0)
    radius = math.ceil(2 * stretch)
    out = np.zeros(arr.shape[:-1] + (out_size,), dtype=np.float64)
    for i in range(out_size):
        src = (i + 0.5) * in_size / out_size - 0.5
        base = math.floor(src)
        taps, weights = [], []
        for t in range(base - radius + 1, base + radius + 1):
            weights.append(cubic((t - src) / stretch) / stretch)
            taps.append(min(max(t, 0), in_size - 1))
        weights = np.asarray(weights)
        weights /= weights.sum()
        for t, wt in zip(taps, weights):
            out[..., i] += wt * arr[..., t].astype(np.float64)
    return out


@pytest.mark.parametrize("in_size,out_size", [(12, 24), (24, 12), (10, 15), (15, 10), (9, 27)])
def test_bicubic_matches_loop_reference(in_size, out_size):
    rng = np.random.default_rng(in_size * 100 + out_size)
    img = rng.uniform(0, 1, size=(3, 8, in_size)).astype(np.float32)
    want = resize_axis_loops(img, out_size)
    got = bicubic_resize(img, out_size, 8)
    assert got.shape == (3, 8, out_size)
    assert np.max(np.abs(got.astype(np.float64) - want)) < 1e-6


def test_bicubic_identity_when_size_unchanged():
    img = random_image(4, size=13)
    assert np.array_equal(bicubic_resize(img, 13, 13), img)


def test_bicubic_preserves_constants():
    img = flat_image(0.37, size=12)
    up = bicubic_resize(img, 30, 18)
    assert np.max(np.abs(up - 0.37)) < 1e-6
    down = bicubic_resize(img, 5, 7)
    assert np.max(np.abs(down - 0.37)) < 1e-6


def test_bicubic_reproduces_linear_ramp_interior():
    img = ramp_image(size=24)
    up = bicubic_upscale(img, 2)
    want = np.linspace(0.0, 1.0, 24)
    # interior only: edge taps are clamped
    step = want[1] - want[0]
    xs = (np.arange(48) + 0.5) * 24 / 48 - 0.5
    expect = np.interp(xs, np.arange(24), want)
    assert np.max(np.abs(up[0, 10, 8:-8] - expect[8:-8])) < 1e-6


def test_bicubic_upscale_shape():
    assert bicubic_upscale(random_image(5, size=10), 3).shape == (3, 30, 30)


def test_bicubic_works_on_2d_arrays():
    img = np.linspace(0, 1, 64, dtype=np.float32).reshape(8, 8)
    assert bicubic_resize(img, 16, 16).shape == (16, 16)


# ---------------------------------------------------------------------------
# degradation

class TestDegrade:
    def test_bi_shape(self):
        lr = degrade(random_image(6, size=24), DegradationSpec("BI", 4))
        assert lr.shape == (3, 6, 6)

    def test_crops_to_multiple_first(self):
        lr = degrade(random_image(7, size=25), DegradationSpec("BI", 4))
        assert lr.shape == (3, 6, 6)

    def test_bd_only_defined_for_scale3(self):
        DegradationSpec("BD", 3)
        for scale in (2, 4):
            with pytest.raises(ValueError):
                DegradationSpec("BD", scale)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            DegradationSpec("BN", 3)

    def test_bd_constant_invariance(self):
        lr = degrade(flat_image(0.6, size=27), DegradationSpec("BD", 3))
        assert lr.shape == (3, 9, 9)
        assert np.max(np.abs(lr - 0.6)) < 1e-6

    def test_bd_is_blur_then_subsample(self):
        img = random_image(8, size=27)
        lr = degrade(img, DegradationSpec("BD", 3))
        k = gaussian_kernel()
        pad = 3
        padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
        manual = np.zeros_like(img)
        for dy in range(7):
            for dx in range(7):
                manual += (
                    k[dy, dx]
                    * padded[:, dy : dy + img.shape[1], dx : dx + img.shape[2]]
                )
        assert np.max(np.abs(lr - manual[:, ::3, ::3])) < 1e-5

    def test_too_small_image_rejected(self):
        with pytest.raises(ValueError):
            degrade(random_image(9, size=2), DegradationSpec("BI", 4))


def test_gaussian_kernel_properties():
    k = gaussian_kernel()
    assert k.shape == (7, 7)
    assert k.sum() == pytest.approx(1.0)
    assert np.array_equal(k, k.T)
    assert np.array_equal(k, k[::-1, ::-1])
    assert k[3, 3] == k.max()


def test_crop_to_multiple():
    img = random_image(10, size=19)
    cropped = crop_to_multiple(img, 4)
    assert cropped.shape == (3, 16, 16)
    assert np.array_equal(cropped, img[:, :16, :16])


# ---------------------------------------------------------------------------
# patch sampling

class TestPatches:
    def test_extract_pair_alignment(self):
        scale, p = 3, 4
        hr = random_image(11, size=36)
        lr = degrade(hr, DegradationSpec("BI", scale))
        pair = extract_pair(lr, hr, scale, p, top=2, left=5, image_id=7)
        assert pair.lr.shape == (3, p, p)
        assert pair.hr.shape == (3, scale * p, scale * p)
        assert np.array_equal(pair.lr, lr[:, 2:6, 5:9])
        assert np.array_equal(pair.hr, hr[:, 6:18, 15:27])
        assert (pair.image_id, pair.top, pair.left) == (7, 2, 5)

    def test_sample_patches_in_bounds_and_deterministic(self):
        hr = random_image(12, size=40)
        a = sample_patches(hr, DegradationSpec("BI", 2), p=8, count=16, seed=3)
        b = sample_patches(hr, DegradationSpec("BI", 2), p=8, count=16, seed=3)
        assert len(a) == 16
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.lr, pb.lr)
            assert 0 <= pa.top <= 20 - 8
            assert 0 <= pa.left <= 20 - 8

    def test_sample_patches_rejects_oversize_patch(self):
        with pytest.raises(ValueError):
            sample_patches(random_image(13, size=16), DegradationSpec("BI", 2),
                           p=12, count=1, seed=0)

    def test_augment_applies_one_transform_to_both(self):
        hr = random_image(14, size=24)
        lr = degrade(hr, DegradationSpec("BI", 2))
        pair = extract_pair(lr, hr, 2, 6, top=1, left=2)
        out = augment(pair, seed=5)
        hit = [
            k for k in range(8)
            if np.array_equal(out.lr, apply_transform(pair.lr, k))
            and np.array_equal(out.hr, apply_transform(pair.hr, k))
        ]
        assert hit, "augmented pair does not match any single transform"

    def test_augment_deterministic_in_seed(self):
        pair = extract_pair(
            degrade(random_image(15, size=24), DegradationSpec("BI", 2)),
            random_image(15, size=24), 2, 6, top=0, left=0,
        )
        a, b = augment(pair, seed=9), augment(pair, seed=9)
        assert np.array_equal(a.lr, b.lr)
        assert np.array_equal(a.hr, b.hr)
