"""TNSR tensor container: text header plus little-endian raw bytes.

A block is ``b"TNSR v1 dtype=<f32|f64> shape=d0,d1,...\\n"`` followed by the
row-major element bytes. A ``.tnsr`` file holds exactly one block; multiple
blocks may be embedded in larger containers (model files), where the header
determines the byte count of the payload.
"""

from __future__ import annotations

import io

import numpy as np

from .errors import ModelIOError

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


def dtype_name(dtype) -> str:
    try:
        return _DTYPE_NAMES[np.dtype(dtype)]
    except KeyError:
        raise ModelIOError(f"unsupported dtype {dtype!r}; use float32 or float64")


def write_block(fh, array: np.ndarray) -> None:
    """Append one TNSR block to a binary stream."""
    array = np.ascontiguousarray(array)
    name = dtype_name(array.dtype)
    shape = ",".join(str(int(d)) for d in array.shape)
    fh.write(f"TNSR v1 dtype={name} shape={shape}\n".encode("ascii"))
    fh.write(array.astype(_DTYPES[name], copy=False).tobytes(order="C"))


def read_block(fh) -> np.ndarray:
    """Read one TNSR block from a binary stream."""
    header = _read_line(fh)
    parts = header.split()
    if len(parts) != 4 or parts[0] != "TNSR":
        raise ModelIOError(f"not a TNSR block: {header!r}")
    if parts[1] != "v1":
        raise ModelIOError(f"unsupported TNSR version {parts[1]!r}")
    fields = dict(p.split("=", 1) for p in parts[2:])
    if fields["dtype"] not in _DTYPES:
        raise ModelIOError(f"unsupported TNSR dtype {fields['dtype']!r}")
    dtype = _DTYPES[fields["dtype"]]
    shape = tuple(int(d) for d in fields["shape"].split(",")) if fields["shape"] else ()
    count = int(np.prod(shape)) if shape else 1
    payload = fh.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise ModelIOError("truncated TNSR payload")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def _read_line(fh) -> str:
    raw = fh.readline()
    if not raw.endswith(b"\n"):
        raise ModelIOError("truncated container: missing header line")
    return raw[:-1].decode("ascii")


def save_tensor(path, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_block(fh, array)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        arr = read_block(fh)
        if fh.read(1):
            raise ModelIOError(f"{path}: trailing bytes after tensor payload")
    return arr


def tensor_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_block(buf, array)
    return buf.getvalue()
