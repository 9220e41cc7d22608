"""Dense tensor substrate.

Tensors throughout the package are plain numpy ndarrays: C-contiguous,
row-major, rank 1..4, dtype float32 (training) or float64 (gradient-check
mode). 4D activations follow the (batch, channel, height, width) layout.
This module provides the checked arithmetic entry points, finiteness
enforcement, and the binary serialization format used for checkpoints and
cached spectrograms.

Serialized layout (little-endian): magic ``GSET``, version u32, rank u32,
one u64 per dim, precision flag u8 (0 = float32, 1 = float64), raw data.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import NumericError, ShapeError

MAGIC = b"GSET"
FORMAT_VERSION = 1
MAX_RANK = 4

_PRECISION_FLAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_FLAG_DTYPES = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}


def as_tensor(data, dtype=np.float32) -> np.ndarray:
    """Coerce ``data`` to a contiguous float tensor of rank <= 4."""
    arr = np.ascontiguousarray(data, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim > MAX_RANK:
        raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum {MAX_RANK}")
    return arr


def check_finite(arr: np.ndarray, context: str = "tensor") -> np.ndarray:
    """Raise NumericError if ``arr`` contains NaN or Inf."""
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NumericError(f"{context}: {bad} non-finite value(s)")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of 2D tensors with an explicit shape check."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}"
        )
    return check_finite(a @ b, "matmul result")


_BINARY_OPS = {
    "add": np.add,
    "mul": np.multiply,
    "sub": np.subtract,
    "max": np.maximum,
}
_UNARY_OPS = {
    "exp": np.exp,
    "log": np.log,
    "relu": lambda x: np.maximum(x, 0.0),
}


def elementwise(op: str, a: np.ndarray, b=None) -> np.ndarray:
    """Apply ``op`` per element; binary ops broadcast ``b`` against ``a``."""
    a = np.asarray(a)
    if op in _UNARY_OPS:
        if b is not None:
            raise ShapeError(f"elementwise '{op}' is unary")
        return check_finite(_UNARY_OPS[op](a), f"elementwise {op}")
    if op not in _BINARY_OPS:
        raise ShapeError(f"unknown elementwise op '{op}'")
    if b is None:
        raise ShapeError(f"elementwise '{op}' needs a second operand")
    b = np.asarray(b)
    try:
        out = _BINARY_OPS[op](a, b)
    except ValueError as exc:
        raise ShapeError(
            f"elementwise {op}: shapes {a.shape} and {b.shape} not broadcastable"
        ) from exc
    return check_finite(out, f"elementwise {op}")


def reduce(op: str, t: np.ndarray, axes=None) -> np.ndarray:
    """Reduce over ``axes`` (all axes when None).

    ``argmax`` accepts a single axis or None (flattened) and resolves ties
    toward the lowest index.
    """
    t = np.asarray(t)
    if t.size == 0:
        raise ShapeError("reduce over an empty tensor")
    if axes is not None and not isinstance(axes, int):
        axes = tuple(axes)
        if len(axes) == 0:
            raise ShapeError("reduce with an empty axis list")
    if op == "sum":
        return np.asarray(np.sum(t, axis=axes))
    if op == "mean":
        return np.asarray(np.mean(t, axis=axes))
    if op == "max":
        return np.asarray(np.max(t, axis=axes))
    if op == "argmax":
        if axes is not None and not isinstance(axes, int):
            if len(axes) != 1:
                raise ShapeError("argmax reduces over exactly one axis")
            axes = axes[0]
        return np.asarray(np.argmax(t, axis=axes))
    raise ShapeError(f"unknown reduce op '{op}'")


def save_tensor(path, arr: np.ndarray, atomic: bool = True) -> None:
    """Write ``arr`` in the binary tensor format.

    With ``atomic`` the file is written to a temp sibling and renamed, so
    concurrent readers never observe a partial file.
    """
    arr = as_tensor(arr, dtype=arr.dtype if arr.dtype in _PRECISION_FLAGS else np.float32)
    flag = _PRECISION_FLAGS[arr.dtype]
    header = MAGIC + struct.pack("<II", FORMAT_VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    header += struct.pack("<B", flag)
    payload = header + arr.tobytes()
    path = os.fspath(path)
    if atomic:
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    else:
        with open(path, "wb") as fh:
            fh.write(payload)


def load_tensor(path) -> np.ndarray:
    """Read a tensor written by :func:`save_tensor`."""
    from .errors import DataError

    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise DataError(f"{path}: not a tensor file (bad magic)")
    version, rank = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported tensor format version {version}")
    if rank < 1 or rank > MAX_RANK:
        raise DataError(f"{path}: bad rank {rank}")
    off = 12
    dims = struct.unpack_from(f"<{rank}Q", raw, off)
    off += 8 * rank
    (flag,) = struct.unpack_from("<B", raw, off)
    off += 1
    if flag not in _FLAG_DTYPES:
        raise DataError(f"{path}: bad precision flag {flag}")
    dtype = _FLAG_DTYPES[flag]
    count = int(np.prod(dims))
    expected = off + count * dtype.itemsize
    if len(raw) != expected:
        raise DataError(
            f"{path}: truncated tensor file ({len(raw)} bytes, expected {expected})"
        )
    arr = np.frombuffer(raw, dtype=dtype.newbyteorder("<"), count=count, offset=off)
    return arr.astype(dtype).reshape(dims)
