"""TNSR container round trips and corruption handling."""

import numpy as np
import pytest

from lvcoverage import tensorfile as tf
from lvcoverage.errors import ModelIOError


class TestTensorRoundTrip:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_bitwise_round_trip(self, tmp_path, rng, dtype):
        arr = rng.standard_normal((3, 5, 2)).astype(dtype)
        path = tmp_path / "t.tnsr"
        tf.save_tensor(path, arr)
        back = tf.load_tensor(path)
        assert back.dtype == arr.dtype
        assert np.array_equal(
            back.view(np.uint8 if dtype is np.float32 else np.uint8),
            arr.view(np.uint8 if dtype is np.float32 else np.uint8))

    def test_header_format(self, tmp_path):
        arr = np.arange(6, dtype=np.float32).reshape(2, 3)
        path = tmp_path / "t.tnsr"
        tf.save_tensor(path, arr)
        raw = path.read_bytes()
        header, payload = raw.split(b"\n", 1)
        assert header == b"TNSR v1 dtype=f32 shape=2,3"
        assert payload == arr.astype("<f4").tobytes()

    def test_scalar_tensor(self, tmp_path):
        path = tmp_path / "s.tnsr"
        tf.save_tensor(path, np.array(4.25))
        assert tf.load_tensor(path) == 4.25

    def test_truncated_payload(self, tmp_path, rng):
        arr = rng.standard_normal(16)
        path = tmp_path / "t.tnsr"
        tf.save_tensor(path, arr)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(ModelIOError, match="truncated"):
            tf.load_tensor(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.tnsr"
        path.write_bytes(b"NOPE v1 dtype=f32 shape=1\n\x00\x00\x00\x00")
        with pytest.raises(ModelIOError):
            tf.load_tensor(path)

    def test_wrong_version(self, tmp_path):
        path = tmp_path / "bad.tnsr"
        path.write_bytes(b"TNSR v2 dtype=f32 shape=1\n\x00\x00\x00\x00")
        with pytest.raises(ModelIOError, match="version"):
            tf.load_tensor(path)

    def test_unsupported_dtype_rejected(self, tmp_path):
        with pytest.raises(ModelIOError):
            tf.save_tensor(tmp_path / "x.tnsr", np.arange(3, dtype=np.int32))

    def test_trailing_bytes_detected(self, tmp_path):
        path = tmp_path / "t.tnsr"
        tf.save_tensor(path, np.zeros(2, dtype=np.float64))
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(ModelIOError, match="trailing"):
            tf.load_tensor(path)
