"""Tensor values and the on-disk manifest format.

A manifest is a JSON object ``{"tensors": [{"name", "dtype", "shape", "file"}]}``
where ``file`` is a path (relative to the manifest) to the raw little-endian
bytes of the tensor in row-major order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..dtypes import decode, element_bytes, encode


class TensorIOError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TensorValue:
    dtype: str
    shape: tuple
    data: bytes

    def __post_init__(self) -> None:
        want = math.prod(self.shape) * element_bytes(self.dtype)
        if len(self.data) != want:
            raise TensorIOError(
                f"{self.dtype}{list(self.shape)} needs {want} bytes, buffer has {len(self.data)}"
            )

    @classmethod
    def from_array(cls, values, dtype: str) -> "TensorValue":
        arr = np.asarray(values)
        return cls(dtype, tuple(arr.shape), encode(arr.astype(np.float64), dtype).tobytes())

    @classmethod
    def zeros(cls, dtype: str, shape: tuple) -> "TensorValue":
        return cls(dtype, tuple(shape), bytes(math.prod(shape) * element_bytes(dtype)))

    def to_array(self) -> np.ndarray:
        raw = np.frombuffer(self.data, dtype=np.uint8).reshape(tuple(self.shape) + (element_bytes(self.dtype),))
        return decode(raw, self.dtype)

    def __eq__(self, other) -> bool:
        return (isinstance(other, TensorValue) and self.dtype == other.dtype
                and tuple(self.shape) == tuple(other.shape) and self.data == other.data)


def read_manifest(path: str | Path) -> dict[str, TensorValue]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise TensorIOError(f"cannot read manifest {path}: {exc}") from None
    out = {}
    for entry in doc.get("tensors", []):
        try:
            name, dtype, shape, file = entry["name"], entry["dtype"], tuple(entry["shape"]), entry["file"]
        except (KeyError, TypeError):
            raise TensorIOError(f"manifest entry {entry!r} lacks name/dtype/shape/file") from None
        blob = path.parent / file
        try:
            data = blob.read_bytes()
        except OSError:
            raise TensorIOError(f"tensor '{name}': blob {blob} not found") from None
        try:
            out[name] = TensorValue(dtype, shape, data)
        except (TensorIOError, ValueError) as exc:
            raise TensorIOError(f"tensor '{name}': {exc}") from None
    return out


def write_manifest(path: str | Path, tensors: dict[str, TensorValue]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in sorted(tensors):
        t = tensors[name]
        file = f"{name}.bin"
        (path.parent / file).write_bytes(t.data)
        entries.append({"name": name, "dtype": t.dtype, "shape": list(t.shape), "file": file})
    path.write_text(json.dumps({"tensors": entries}, indent=2, sort_keys=True) + "\n")
