"""Conv layer descriptors, parameter stores, init, and the weight container."""

import json
import struct

import numpy as np
import pytest

from pmrn.autodiff import Eager, ShapeError, Tensor
from pmrn.nn import (
    ConvLayer,
    InitSpec,
    ParamStore,
    WeightFileError,
    check_store_matches,
    init_params,
    load_weights,
    read_container,
    save_weights,
    write_container,
)


def small_store():
    store = ParamStore()
    store.add("a.weight", Tensor(np.arange(12, dtype=np.float32).reshape(2, 3, 1, 2)))
    store.add("a.bias", Tensor.zeros((1, 2, 1, 1)))
    return store


# ---------------------------------------------------------------------------
# ConvLayer

class TestConvLayer:
    def test_basic_properties(self):
        layer = ConvLayer("fem", 3, 64, 3)
        assert layer.padding == 1
        assert layer.weight_name == "fem.weight"
        assert layer.bias_name == "fem.bias"
        assert layer.weight_shape == (64, 3, 3, 3)

    def test_grouped_weight_shape(self):
        layer = ConvLayer("dw", 8, 8, 3, groups=8)
        assert layer.weight_shape == (8, 1, 3, 3)

    @pytest.mark.parametrize("kernel", [0, 2, 4, -1])
    def test_rejects_even_kernels(self, kernel):
        with pytest.raises(ValueError):
            ConvLayer("x", 4, 4, kernel)

    def test_rejects_bad_groups(self):
        with pytest.raises(ValueError):
            ConvLayer("x", 4, 6, 3, groups=4)

    def test_forward_checks_channels(self):
        layer = ConvLayer("x", 3, 4, 3)
        store = ParamStore()
        layer.register(store)
        ctx = Eager()
        with pytest.raises(ShapeError):
            layer.forward(ctx, store, Tensor(np.zeros((1, 2, 5, 5))))

    def test_register_then_forward_shape(self):
        layer = ConvLayer("x", 3, 4, 3)
        store = ParamStore()
        layer.register(store)
        out = layer.forward(Eager(), store, Tensor(np.zeros((1, 3, 5, 6))))
        assert out.shape == (1, 4, 5, 6)


# ---------------------------------------------------------------------------
# ParamStore

class TestParamStore:
    def test_insertion_order_is_kept(self):
        store = ParamStore()
        names = ["z.weight", "a.weight", "m.bias"]
        for n in names:
            store.add(n, Tensor.zeros((1, 1, 1, 1)))
        assert list(store.names()) == names

    def test_duplicate_add_rejected(self):
        store = small_store()
        with pytest.raises(ValueError):
            store.add("a.weight", Tensor.zeros((1, 1, 1, 1)))

    def test_setitem_requires_existing_name(self):
        store = small_store()
        with pytest.raises(KeyError):
            store["missing"] = Tensor.zeros((1, 1, 1, 1))

    def test_setitem_requires_same_shape(self):
        store = small_store()
        with pytest.raises(ShapeError):
            store["a.bias"] = Tensor.zeros((1, 3, 1, 1))

    def test_total_params(self):
        assert small_store().total_params() == 14

    def test_copy_is_independent(self):
        store = small_store()
        dup = store.copy()
        dup["a.bias"] = Tensor.full((1, 2, 1, 1), 5.0)
        assert store["a.bias"].data.sum() == 0.0

    def test_astype_converts_all(self):
        dup = small_store().astype(np.float64)
        assert all(t.dtype == np.float64 for _, t in dup.items())


# ---------------------------------------------------------------------------
# initialization

class TestInit:
    def layer_store(self):
        store = ParamStore()
        ConvLayer("c1", 16, 32, 3).register(store)
        ConvLayer("c2", 32, 32, 1).register(store)
        return store

    def test_biases_zero_weights_bounded(self):
        store = init_params(self.layer_store(), InitSpec(seed=3))
        w = store["c1.weight"].data
        bound = np.sqrt(6.0 / (16 * 3 * 3))
        assert np.max(np.abs(w)) <= bound
        assert np.max(np.abs(w)) > 0.8 * bound  # actually fills the range
        assert np.all(store["c1.bias"].data == 0.0)

    def test_gain_scales_bound(self):
        base = init_params(self.layer_store(), InitSpec(seed=3))
        half = init_params(self.layer_store(), InitSpec(seed=3, gain=0.5))
        assert np.allclose(half["c1.weight"].data,
                           0.5 * base["c1.weight"].data, atol=1e-7)

    def test_seed_determinism(self):
        a = init_params(self.layer_store(), InitSpec(seed=9))
        b = init_params(self.layer_store(), InitSpec(seed=9))
        c = init_params(self.layer_store(), InitSpec(seed=10))
        assert np.array_equal(a["c1.weight"].data, b["c1.weight"].data)
        assert not np.array_equal(a["c1.weight"].data, c["c1.weight"].data)


# ---------------------------------------------------------------------------
# container format

class TestContainer:
    def test_round_trip_bitwise(self, tmp_path):
        path = tmp_path / "w.pmrn"
        store = small_store()
        config = {"channels": 2, "scale": 4}
        save_weights(store, path, config, meta={"note": "test"})
        loaded, got_config, meta = load_weights(path)
        assert got_config == config
        assert meta["note"] == "test"
        assert list(loaded.names()) == list(store.names())
        for name, tensor in store.items():
            assert np.array_equal(loaded[name].data, tensor.data)
            assert loaded[name].dtype == np.float32

    def test_float64_store_is_refused(self, tmp_path):
        # serialization is strict float32; converting is the caller's call
        path = tmp_path / "w.pmrn"
        with pytest.raises(WeightFileError, match="float32"):
            save_weights(small_store().astype(np.float64), path, {})

    def test_expect_config_mismatch(self, tmp_path):
        path = tmp_path / "w.pmrn"
        save_weights(small_store(), path, {"scale": 4})
        with pytest.raises(WeightFileError, match="scale"):
            load_weights(path, expect_config={"scale": 2})

    def test_kind_mismatch(self, tmp_path):
        path = tmp_path / "w.pmrn"
        write_container(path, "pmrn-checkpoint", {}, {}, small_store())
        with pytest.raises(WeightFileError):
            read_container(path, "pmrn-weights")

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "w.pmrn"
        save_weights(small_store(), path, {})
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(WeightFileError, match="magic"):
            load_weights(path)

    def test_payload_corruption_fails_checksum(self, tmp_path):
        path = tmp_path / "w.pmrn"
        save_weights(small_store(), path, {})
        blob = bytearray(path.read_bytes())
        blob[-8] ^= 0xFF  # inside the payload, before the trailing checksum
        path.write_bytes(bytes(blob))
        with pytest.raises(WeightFileError, match="checksum"):
            load_weights(path)

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "w.pmrn"
        save_weights(small_store(), path, {})
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 5])
        with pytest.raises(WeightFileError):
            load_weights(path)

    def test_trailing_garbage_detected(self, tmp_path):
        path = tmp_path / "w.pmrn"
        save_weights(small_store(), path, {})
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(WeightFileError):
            load_weights(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "w.pmrn"
        save_weights(small_store(), path, {})
        blob = bytearray(path.read_bytes())
        struct.pack_into("<I", blob, 4, 99)
        path.write_bytes(bytes(blob))
        with pytest.raises(WeightFileError, match="version"):
            load_weights(path)

    def test_header_is_json_with_tensor_table(self, tmp_path):
        path = tmp_path / "w.pmrn"
        save_weights(small_store(), path, {"scale": 2})
        blob = path.read_bytes()
        header_len = struct.unpack_from("<I", blob, 8)[0]
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
        assert header["format"] == "pmrn-weights"
        assert header["dtype"] == "float32"
        assert [t["name"] for t in header["tensors"]] == ["a.weight", "a.bias"]


# ---------------------------------------------------------------------------
# template matching

def test_check_store_matches():
    store = small_store()
    check_store_matches(store, small_store())
    other = ParamStore()
    other.add("a.weight", Tensor.zeros((2, 3, 1, 2)))
    with pytest.raises(WeightFileError, match="a.bias"):
        check_store_matches(other, store)
    shifted = ParamStore()
    shifted.add("a.weight", Tensor.zeros((2, 3, 1, 2)))
    shifted.add("a.bias", Tensor.zeros((1, 3, 1, 1)))
    with pytest.raises(WeightFileError):
        check_store_matches(shifted, store)
