"""Element types and their byte-level encodings.

Raw ``uN`` types are bit containers; numeric decoding is defined for the
integer types up to 64 bits and for the float types.  bf16 and fp8 (e4m3)
conversions round to nearest even via ``ml_dtypes``; arithmetic results are
first rounded to fp32, the working precision.
"""

from __future__ import annotations

import ml_dtypes
import numpy as np

ELEMENT_BYTES = {
    "u8": 1, "u16": 2, "u32": 4, "u64": 8, "u128": 16, "u256": 32,
    "i32": 4, "bf16": 2, "fp8": 1, "fp32": 4,
}
FLOAT_TYPES = frozenset({"bf16", "fp8", "fp32"})
RAW_TYPES = frozenset({"u8", "u16", "u32", "u64", "u128", "u256"})

_NUMPY = {
    "u8": np.dtype("<u1"), "u16": np.dtype("<u2"), "u32": np.dtype("<u4"), "u64": np.dtype("<u8"),
    "i32": np.dtype("<i4"), "bf16": np.dtype(ml_dtypes.bfloat16),
    "fp8": np.dtype(ml_dtypes.float8_e4m3fn), "fp32": np.dtype("<f4"),
}


class DtypeError(ValueError):
    pass


def element_bytes(dtype: str) -> int:
    try:
        return ELEMENT_BYTES[dtype]
    except KeyError:
        raise DtypeError(f"unknown element type {dtype!r}") from None


def is_numeric(dtype: str) -> bool:
    return dtype in _NUMPY


def numpy_dtype(dtype: str) -> np.dtype:
    if dtype not in _NUMPY:
        raise DtypeError(f"element type {dtype!r} has no numeric interpretation")
    return _NUMPY[dtype]


def decode(raw: np.ndarray, dtype: str) -> np.ndarray:
    """uint8 array (..., nbytes) -> float64 values (...)."""
    nd = numpy_dtype(dtype)
    raw = np.ascontiguousarray(raw, dtype=np.uint8)
    vals = raw.view(nd).reshape(raw.shape[:-1])
    return vals.astype(np.float64)


def encode(values: np.ndarray, dtype: str) -> np.ndarray:
    """float64 values (...) -> uint8 array (..., nbytes) with round-to-nearest-even."""
    nd = numpy_dtype(dtype)
    values = np.asarray(values, dtype=np.float64)
    if dtype in FLOAT_TYPES:
        # fp32 is the working precision: round once to f32, then once to the target
        conv = values.astype(np.float32).astype(nd)
    else:
        info = np.iinfo(nd)
        conv = np.clip(np.rint(values), info.min, info.max).astype(nd)
    conv = np.ascontiguousarray(conv)
    return conv.view(np.uint8).reshape(values.shape + (nd.itemsize,))


def to_bytes(array: np.ndarray, dtype: str) -> bytes:
    """Serialize a numeric array to little-endian bytes of ``dtype``."""
    return encode(np.asarray(array, dtype=np.float64), dtype).tobytes()


def from_bytes(blob: bytes, dtype: str, shape: tuple) -> np.ndarray:
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(tuple(shape) + (element_bytes(dtype),))
    return decode(raw, dtype)
