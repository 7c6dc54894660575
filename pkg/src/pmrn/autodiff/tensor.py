"""Dense rank-4 tensors in (batch, channel, height, width) layout."""

from __future__ import annotations

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand shapes or channel/group structure do not match."""


class Tensor:
    """Immutable rank-4 array of floats, row-major (n, c, h, w).

    Storage precision is float32 by default; float64 is permitted so that
    gradient checking can run in a high-precision shadow mode. The backing
    array is made read-only: every operation returns a new Tensor.
    """

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if arr.ndim != 4:
            raise ShapeError(f"tensor must be rank 4 (n,c,h,w), got rank {arr.ndim}")
        if min(arr.shape) < 1:
            raise ShapeError(f"all dimensions must be >= 1, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype))

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Writable copy of the underlying array."""
        return self.data.copy()

    @staticmethod
    def zeros(shape, dtype=np.float32) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype))

    @staticmethod
    def full(shape, value, dtype=np.float32) -> "Tensor":
        return Tensor(np.full(shape, value, dtype=dtype))

    @staticmethod
    def vector(values, dtype=np.float32) -> "Tensor":
        """Channel vector as a (1, c, 1, 1) tensor (used for conv biases)."""
        v = np.asarray(values, dtype=dtype).reshape(-1)
        return Tensor(v.reshape(1, v.size, 1, 1))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"


def require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        for axis, (da, db) in enumerate(zip(a.shape, b.shape)):
            if da != db:
                raise ShapeError(
                    f"{op}: operand shapes {a.shape} vs {b.shape} differ at axis {axis}"
                )
        raise ShapeError(f"{op}: operand shapes {a.shape} vs {b.shape} differ")
