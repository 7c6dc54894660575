"""Raw numpy compute kernels for the operator set.

Forward kernels take and return plain ndarrays; backward kernels map the
output gradient to input gradients. Convolution uses the cross-correlation
convention (no kernel flip) with zero padding, and is implemented as
im2col + matmul; grouped convolution runs one batched matmul over groups.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError


def check_conv_shapes(x_shape, w_shape, stride: int, padding: int, groups: int):
    """Validate conv operands, returning the output shape (n, co, ho, wo)."""
    n, ci, h, w = x_shape
    co, cig, fh, fw = w_shape
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d: padding must be >= 0, got {padding}")
    if groups < 1:
        raise ValueError(f"conv2d: groups must be >= 1, got {groups}")
    if ci % groups != 0:
        raise ShapeError(f"conv2d: groups={groups} does not divide input channels {ci}")
    if co % groups != 0:
        raise ShapeError(f"conv2d: groups={groups} does not divide output channels {co}")
    if cig != ci // groups:
        raise ShapeError(
            f"conv2d: weight channel-in dim {cig} != input channels {ci} / groups {groups}"
        )
    ho = (h + 2 * padding - fh) // stride + 1
    wo = (w + 2 * padding - fw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d: kernel ({fh},{fw}) too large for input ({h},{w}) with padding {padding}"
        )
    return n, co, ho, wo


def _im2col(x: np.ndarray, fh: int, fw: int, stride: int, padding: int, groups: int):
    """Column buffer of input windows, shaped (g, n*ho*wo, cig*fh*fw)."""
    n, ci, _, _ = x.shape
    cig = ci // groups
    if padding > 0:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (fh, fw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    win = win.reshape(n, groups, cig, ho, wo, fh, fw)
    col = win.transpose(1, 0, 3, 4, 2, 5, 6).reshape(groups, n * ho * wo, cig * fh * fw)
    return np.ascontiguousarray(col), ho, wo


def conv2d_forward(x, w, b, stride=1, padding=0, groups=1):
    n, co, ho, wo = check_conv_shapes(x.shape, w.shape, stride, padding, groups)
    cog = co // groups
    fh, fw = w.shape[2], w.shape[3]
    cig = x.shape[1] // groups
    col, ho, wo = _im2col(x, fh, fw, stride, padding, groups)
    wg = w.reshape(groups, cog, cig * fh * fw)
    out = col @ wg.transpose(0, 2, 1)  # (g, n*ho*wo, cog)
    out = out.reshape(groups, n, ho, wo, cog).transpose(1, 0, 4, 2, 3)
    out = np.ascontiguousarray(out).reshape(n, co, ho, wo)
    if b is not None:
        out += b.reshape(1, co, 1, 1)
    return out


def conv2d_backward(gout, x, w, has_bias, stride=1, padding=0, groups=1):
    """Gradients (dx, dw, db) for conv2d_forward; db is None without bias."""
    n, ci, h, wd = x.shape
    co, cig, fh, fw = w.shape
    cog = co // groups
    ho, wo = gout.shape[2], gout.shape[3]

    # (g, cog, n*ho*wo) view of the output gradient
    gg = gout.reshape(n, groups, cog, ho, wo).transpose(1, 2, 0, 3, 4)
    gg = np.ascontiguousarray(gg).reshape(groups, cog, n * ho * wo)

    col, _, _ = _im2col(x, fh, fw, stride, padding, groups)
    dw = (gg @ col).reshape(co, cig, fh, fw)

    # Scatter w^T @ gout back onto the padded input, one kernel tap at a time.
    wg = w.reshape(groups, cog, cig * fh * fw)
    dcol = wg.transpose(0, 2, 1) @ gg  # (g, cig*fh*fw, n*ho*wo)
    dcol = dcol.reshape(groups, cig, fh, fw, n, ho, wo)
    dxp = np.zeros((n, ci, h + 2 * padding, wd + 2 * padding), dtype=x.dtype)
    dxv = dxp.reshape(n, groups, cig, h + 2 * padding, wd + 2 * padding)
    for y in range(fh):
        for xk in range(fw):
            dxv[:, :, :, y : y + stride * ho : stride, xk : xk + stride * wo : stride] += (
                dcol[:, :, y, xk].transpose(2, 0, 1, 3, 4)
            )
    dx = dxp[:, :, padding : padding + h, padding : padding + wd]

    db = gout.sum(axis=(0, 2, 3)) if has_bias else None
    return np.ascontiguousarray(dx), dw, db


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(gout, x):
    # Subgradient at 0 is 0: strictly positive mask.
    return gout * (x > 0)


def sigmoid_forward(x):
    # Split by sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(gout, out):
    return gout * out * (1.0 - out)


def add_forward(a, b):
    return a + b


def affine_gate_forward(x, gamma, beta):
    return (gamma + 1.0) * x + beta


def affine_gate_backward(gout, x, gamma):
    return gout * (gamma + 1.0), gout * x, gout.copy()


def concat_channels_forward(parts):
    return np.concatenate(parts, axis=1)


def concat_channels_backward(gout, channel_counts):
    splits = np.cumsum(channel_counts[:-1])
    return np.split(gout, splits, axis=1)


def pixel_shuffle_forward(x, r: int):
    n, c, h, w = x.shape
    if c % (r * r) != 0:
        raise ShapeError(f"pixel_shuffle: channels {c} not divisible by r^2 = {r * r}")
    c2 = c // (r * r)
    out = x.reshape(n, c2, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(out).reshape(n, c2, h * r, w * r)


def pixel_unshuffle_forward(x, r: int):
    n, c, h, w = x.shape
    if h % r != 0 or w % r != 0:
        raise ShapeError(f"pixel_unshuffle: spatial dims ({h},{w}) not divisible by r={r}")
    out = x.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(out).reshape(n, c * r * r, h // r, w // r)


def mean_forward(x):
    return np.full((1, 1, 1, 1), x.mean(dtype=np.float64), dtype=x.dtype)


def mean_backward(gout, shape, dtype):
    g = gout.reshape(())
    return np.full(shape, g / float(np.prod(shape)), dtype=dtype)


def l1_forward(a, b):
    return np.full((1, 1, 1, 1), np.abs(a - b).mean(dtype=np.float64), dtype=a.dtype)


def l1_backward(gout, a, b):
    g = gout.reshape(()) / a.size
    da = np.sign(a - b) * g
    return da.astype(a.dtype), -da.astype(a.dtype)
