"""Tensor semantics and forward kernels against independent references.

The conv2d reference here is a deliberately naive quadruple loop; it shares
no code with the im2col path under test.
"""

import numpy as np
import pytest

from pmrn.autodiff import Eager, ShapeError, Tensor
from pmrn.autodiff.kernels import (
    conv2d_forward,
    pixel_shuffle_forward,
    pixel_unshuffle_forward,
)
from pmrn.autodiff.tensor import require_same_shape


# ---------------------------------------------------------------------------
# Tensor container

class TestTensor:
    def test_wraps_rank4(self):
        t = Tensor(np.zeros((2, 3, 4, 5), dtype=np.float32))
        assert t.shape == (2, 3, 4, 5)
        assert t.dtype == np.float32

    @pytest.mark.parametrize("shape", [(3,), (2, 3), (2, 3, 4), (1, 2, 3, 4, 5)])
    def test_rejects_other_ranks(self, shape):
        with pytest.raises(ShapeError):
            Tensor(np.zeros(shape))

    def test_preserves_float64(self):
        t = Tensor(np.zeros((1, 1, 2, 2), dtype=np.float64))
        assert t.dtype == np.float64

    def test_coerces_integers_to_float32(self):
        t = Tensor(np.arange(4, dtype=np.int64).reshape(1, 1, 2, 2))
        assert t.dtype == np.float32

    def test_data_is_read_only(self):
        t = Tensor(np.zeros((1, 1, 2, 2)))
        with pytest.raises(ValueError):
            t.data[0, 0, 0, 0] = 1.0

    def test_numpy_returns_writable_copy(self):
        t = Tensor(np.zeros((1, 1, 2, 2)))
        out = t.numpy()
        out[0, 0, 0, 0] = 7.0
        assert t.data[0, 0, 0, 0] == 0.0

    def test_zeros_full_vector(self):
        assert Tensor.zeros((1, 2, 3, 4)).data.sum() == 0.0
        assert np.all(Tensor.full((1, 2, 1, 1), 3.5).data == 3.5)
        v = Tensor.vector([1.0, 2.0, 3.0])
        assert v.shape == (1, 3, 1, 1)

    def test_require_same_shape(self):
        a = Tensor(np.zeros((1, 1, 2, 2)))
        b = Tensor(np.zeros((1, 1, 2, 3)))
        with pytest.raises(ShapeError):
            require_same_shape(a, b, "test")


# ---------------------------------------------------------------------------
# conv2d against a quadruple-loop reference

def conv2d_loops(x, w, b, stride, padding, groups):
    """Direct cross-correlation; no vectorization on purpose."""
    n, ci, h, wd = x.shape
    co, cig, fh, fw = w.shape
    cog = co // groups
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - fh) // stride + 1
    wo = (wd + 2 * padding - fw) // stride + 1
    out = np.zeros((n, co, ho, wo), dtype=np.float64)
    for bi in range(n):
        for oc in range(co):
            g = oc // cog
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ic in range(cig):
                        for ky in range(fh):
                            for kx in range(fw):
                                acc += (
                                    xp[bi, g * cig + ic, oy * stride + ky, ox * stride + kx]
                                    * w[oc, ic, ky, kx]
                                )
                    out[bi, oc, oy, ox] = acc
            if b is not None:
                out[bi, oc] += b[oc]
    return out


CONV_CASES = [
    # (n, ci, co, h, w, k, stride, padding, groups, bias)
    (1, 1, 1, 5, 5, 3, 1, 1, 1, True),
    (2, 3, 4, 6, 5, 3, 1, 1, 1, True),
    (1, 4, 4, 6, 6, 3, 1, 1, 4, True),      # depthwise
    (1, 4, 6, 5, 5, 1, 1, 0, 1, True),      # pointwise
    (1, 6, 4, 7, 7, 3, 2, 1, 2, False),     # grouped, strided, no bias
    (2, 2, 2, 8, 6, 5, 1, 2, 1, True),
    (1, 3, 3, 4, 4, 3, 1, 0, 3, False),     # depthwise, valid
    (1, 8, 4, 5, 5, 1, 2, 0, 4, True),      # grouped pointwise, stride 2
]


@pytest.mark.parametrize("case", CONV_CASES)
def test_conv2d_matches_loop_reference(case):
    n, ci, co, h, wd, k, stride, padding, groups, bias = case
    rng = np.random.default_rng(hash(case) % (2**32))
    x = rng.standard_normal((n, ci, h, wd))
    w = rng.standard_normal((co, ci // groups, k, k))
    b = rng.standard_normal(co) if bias else None
    got = conv2d_forward(x, w, b, stride, padding, groups)
    want = conv2d_loops(x, w, b, stride, padding, groups)
    assert got.shape == want.shape
    assert np.max(np.abs(got - want)) < 1e-10


def test_conv2d_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(20):
        groups = int(rng.integers(1, 4))
        cig = int(rng.integers(1, 4))
        cog = int(rng.integers(1, 4))
        ci, co = groups * cig, groups * cog
        k = int(rng.choice([1, 3, 5]))
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, k // 2 + 1))
        h = int(rng.integers(k, k + 5))
        wd = int(rng.integers(k, k + 5))
        n = int(rng.integers(1, 3))
        x = rng.standard_normal((n, ci, h, wd))
        w = rng.standard_normal((co, cig, k, k))
        b = rng.standard_normal(co) if rng.uniform() < 0.5 else None
        got = conv2d_forward(x, w, b, stride, padding, groups)
        want = conv2d_loops(x, w, b, stride, padding, groups)
        assert np.max(np.abs(got - want)) < 1e-9


# ---------------------------------------------------------------------------
# remaining ops, eager context

def test_relu_and_sigmoid_values():
    ctx = Eager()
    x = Tensor(np.array([[-2.0, 0.0, 3.0]]).reshape(1, 3, 1, 1))
    assert np.allclose(ctx.relu(x).data.ravel(), [0.0, 0.0, 3.0])
    sig = ctx.sigmoid(x).data.ravel()
    assert np.allclose(sig, 1.0 / (1.0 + np.exp([2.0, 0.0, -3.0])))


def test_add_and_shape_guard():
    ctx = Eager()
    a = Tensor(np.ones((1, 2, 2, 2)))
    b = Tensor(np.full((1, 2, 2, 2), 2.0))
    assert np.all(ctx.add(a, b).data == 3.0)
    with pytest.raises(ShapeError):
        ctx.add(a, Tensor(np.ones((1, 2, 2, 3))))


def test_affine_gate_formula():
    ctx = Eager()
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((2, 3, 4, 4)))
    gamma = Tensor(rng.standard_normal((2, 3, 4, 4)))
    beta = Tensor(rng.standard_normal((2, 3, 4, 4)))
    out = ctx.affine_gate(x, gamma, beta).data
    assert np.allclose(out, (gamma.data + 1.0) * x.data + beta.data)


def test_concat_channels_matches_numpy():
    ctx = Eager()
    rng = np.random.default_rng(1)
    parts = [Tensor(rng.standard_normal((1, c, 3, 3))) for c in (2, 1, 4)]
    out = ctx.concat_channels(parts).data
    assert np.array_equal(out, np.concatenate([p.data for p in parts], axis=1))
    with pytest.raises(ShapeError):
        ctx.concat_channels([parts[0], Tensor(np.zeros((1, 2, 3, 4)))])
    with pytest.raises(ShapeError):
        ctx.concat_channels([])


def test_pixel_shuffle_against_index_rule():
    rng = np.random.default_rng(2)
    r = 2
    x = rng.standard_normal((1, 3 * r * r, 4, 5))
    out = pixel_shuffle_forward(x, r)
    assert out.shape == (1, 3, 8, 10)
    # out[c, r*y + dy, r*x + dx] pulls channel c*r*r + dy*r + dx
    for c in range(3):
        for dy in range(r):
            for dx in range(r):
                src = x[0, c * r * r + dy * r + dx]
                assert np.array_equal(out[0, c, dy::r, dx::r], src)


def test_pixel_unshuffle_inverts_shuffle():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 12, 3, 4))
    assert np.array_equal(pixel_unshuffle_forward(pixel_shuffle_forward(x, 2), 2), x)


def test_mean_and_l1_values():
    ctx = Eager()
    a = Tensor(np.arange(8, dtype=np.float64).reshape(1, 2, 2, 2))
    b = Tensor(np.zeros((1, 2, 2, 2)))
    m = ctx.mean(a)
    assert m.shape == (1, 1, 1, 1)
    assert m.data.item() == pytest.approx(3.5)
    loss = ctx.l1_loss(a, b)
    assert loss.data.item() == pytest.approx(3.5)
    with pytest.raises(ShapeError):
        ctx.l1_loss(a, Tensor(np.zeros((1, 2, 2, 3))))


def test_eager_rejects_bare_arrays():
    ctx = Eager()
    with pytest.raises(TypeError):
        ctx.relu(np.zeros((1, 1, 2, 2)))
