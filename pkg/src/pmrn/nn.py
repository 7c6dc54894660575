"""Parameterized layers, initialization, and weight serialization.

The parameter store maps hierarchical names (``body.block3.comb7.conv1.weight``)
to tensors in construction order. Weight files are a fixed little-endian
container: magic ``PMRN``, a version word, a JSON header (config record plus
name/shape table), the raw float32 payloads in store order, and a trailing
CRC32 over everything before it. The exact layout is documented in the
README so external tools can read and diff the files.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor

MAGIC = b"PMRN"
FORMAT_VERSION = 1


class WeightFileError(ValueError):
    """Malformed, corrupt, or incompatible weight/checkpoint file."""


@dataclass(frozen=True)
class ConvLayer:
    """Square odd-kernel convolution with bias, stride 1, same-size padding."""

    name: str
    ch_in: int
    ch_out: int
    kernel: int
    groups: int = 1

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"{self.name}: kernel must be odd, got {self.kernel}")
        if self.ch_in % self.groups or self.ch_out % self.groups:
            raise ValueError(
                f"{self.name}: groups={self.groups} must divide "
                f"ch_in={self.ch_in} and ch_out={self.ch_out}"
            )

    @property
    def padding(self) -> int:
        return (self.kernel - 1) // 2

    @property
    def weight_name(self) -> str:
        return f"{self.name}.weight"

    @property
    def bias_name(self) -> str:
        return f"{self.name}.bias"

    @property
    def weight_shape(self):
        return (self.ch_out, self.ch_in // self.groups, self.kernel, self.kernel)

    def register(self, store: "ParamStore") -> None:
        store.add(self.weight_name, Tensor.zeros(self.weight_shape))
        store.add(self.bias_name, Tensor.zeros((1, self.ch_out, 1, 1)))

    def forward(self, ctx, params, x):
        xv = x.value if hasattr(x, "value") else x
        if xv.shape[1] != self.ch_in:
            raise ShapeError(
                f"{self.name}: input has {xv.shape[1]} channels, expected {self.ch_in}"
            )
        return ctx.conv2d(
            x,
            params[self.weight_name],
            params[self.bias_name],
            padding=self.padding,
            groups=self.groups,
        )


class ParamStore:
    """Ordered mapping from hierarchical parameter name to Tensor.

    Iteration order is construction order and is the canonical order for
    initialization and serialization.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> None:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        self._params[name] = tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __setitem__(self, name: str, tensor: Tensor) -> None:
        old = self._params.get(name)
        if old is None:
            raise KeyError(f"unknown parameter: {name}")
        if old.shape != tensor.shape:
            raise ShapeError(
                f"{name}: replacement shape {tensor.shape} != stored shape {old.shape}"
            )
        self._params[name] = tensor

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def total_params(self) -> int:
        return sum(t.size for t in self._params.values())

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, t in self._params.items():
            out.add(name, t)
        return out

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for name, t in self._params.items():
            out.add(name, t.astype(dtype))
        return out


@dataclass(frozen=True)
class InitSpec:
    """Deterministic initialization recipe: same seed, same bits."""

    scheme: str = "kaiming_uniform"
    fan: str = "fan_in"
    gain: float = 1.0
    seed: int = 0


def init_params(store: ParamStore, spec: InitSpec) -> ParamStore:
    """Kaiming-uniform weights (bound gain*sqrt(6/fan_in)), zero biases.

    Tensors named ``*.weight`` are treated as conv kernels whose fan-in is
    ``shape[1] * shape[2] * shape[3]`` (per-group input patch size); all
    other tensors are zeroed. Draw order is store order.
    """
    if spec.scheme != "kaiming_uniform" or spec.fan != "fan_in":
        raise ValueError(f"unsupported init spec: {spec}")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    out = ParamStore()
    for name, t in store.items():
        if name.endswith(".weight"):
            fan_in = t.shape[1] * t.shape[2] * t.shape[3]
            bound = spec.gain * math.sqrt(6.0 / fan_in)
            arr = rng.uniform(-bound, bound, size=t.shape).astype(np.float32)
            out.add(name, Tensor(arr))
        else:
            out.add(name, Tensor.zeros(t.shape, dtype=np.float32))
    return out


def _encode_container(kind: str, config: dict, meta: dict, store: ParamStore) -> bytes:
    tensors = []
    payload = bytearray()
    for name, t in store.items():
        if t.dtype != np.float32:
            raise WeightFileError(f"{name}: only float32 tensors are serialized")
        tensors.append({"name": name, "shape": list(t.shape)})
        payload += t.data.astype("<f4", copy=False).tobytes()
    header = json.dumps(
        {
            "format": kind,
            "dtype": "float32",
            "config": config,
            "meta": meta,
            "tensors": tensors,
        },
        sort_keys=True,
    ).encode("utf-8")
    body = (
        MAGIC
        + FORMAT_VERSION.to_bytes(4, "little")
        + len(header).to_bytes(4, "little")
        + header
        + bytes(payload)
    )
    return body + (zlib.crc32(body) & 0xFFFFFFFF).to_bytes(4, "little")


def _decode_container(blob: bytes, path: str):
    if len(blob) < 16:
        raise WeightFileError(f"{path}: truncated file ({len(blob)} bytes)")
    if blob[:4] != MAGIC:
        raise WeightFileError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version = int.from_bytes(blob[4:8], "little")
    if version != FORMAT_VERSION:
        raise WeightFileError(f"{path}: unsupported format version {version}")
    stored_crc = int.from_bytes(blob[-4:], "little")
    actual_crc = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise WeightFileError(
            f"{path}: checksum mismatch (stored {stored_crc:#010x}, "
            f"computed {actual_crc:#010x})"
        )
    hlen = int.from_bytes(blob[8:12], "little")
    if 12 + hlen > len(blob) - 4:
        raise WeightFileError(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFileError(f"{path}: unreadable header: {exc}") from exc

    store = ParamStore()
    offset = 12 + hlen
    for rec in header["tensors"]:
        name, shape = rec["name"], tuple(rec["shape"])
        nbytes = int(np.prod(shape)) * 4
        chunk = blob[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise WeightFileError(f"{path}: payload truncated at tensor {name}")
        arr = np.frombuffer(chunk, dtype="<f4").reshape(shape)
        store.add(name, Tensor(arr.astype(np.float32)))
        offset += nbytes
    if offset != len(blob) - 4:
        raise WeightFileError(f"{path}: {len(blob) - 4 - offset} unexpected trailing bytes")
    return store, header


def write_container(path, kind: str, config: dict, meta: dict, store: ParamStore) -> None:
    blob = _encode_container(kind, config, meta, store)
    with open(path, "wb") as fh:
        fh.write(blob)


def read_container(path, expect_kind: str):
    """Load any container of the given kind, returning (store, config, meta)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    store, header = _decode_container(blob, str(path))
    if header.get("format") != expect_kind:
        raise WeightFileError(
            f"{path}: expected a {expect_kind!r} file, found {header.get('format')!r}"
        )
    return store, header.get("config", {}), header.get("meta", {})


def save_weights(store: ParamStore, path, config: dict, meta: dict | None = None) -> None:
    write_container(path, "pmrn-weights", config, meta or {}, store)


def load_weights(path, expect_config: dict | None = None):
    """Load a weight file, returning (store, config, meta).

    When ``expect_config`` is given, every key it holds must match the file
    header; the first mismatching key is named in the error.
    """
    store, config, meta = read_container(path, "pmrn-weights")
    if expect_config is not None:
        for key in sorted(expect_config):
            if config.get(key) != expect_config[key]:
                raise WeightFileError(
                    f"{path}: config mismatch at {key!r}: file has "
                    f"{config.get(key)!r}, expected {expect_config[key]!r}"
                )
    return store, config, meta


def check_store_matches(store: ParamStore, template: ParamStore, path: str = "weights") -> None:
    """Verify name set and shapes against a model's template store."""
    for name, t in template.items():
        if name not in store:
            raise WeightFileError(f"{path}: missing parameter {name}")
        if store[name].shape != t.shape:
            raise WeightFileError(
                f"{path}: {name} has shape {store[name].shape}, expected {t.shape}"
            )
    for name in store.names():
        if name not in template:
            raise WeightFileError(f"{path}: unexpected parameter {name}")
