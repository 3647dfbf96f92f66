"""The tag lattice: bottom < tuple < top, with tuples pairwise incomparable.

Tags appear in two forms.  Python-level tags (``BOTTOM``, ``TOP`` or a tuple
of ints) are used at API boundaries.  Inside the engines every tag is an
interned ``int32`` id so that whole byte arrays can be merged with numpy:
``0`` is bottom, ``1`` is top and tuples get ids from a ``TagTable``.
"""

from __future__ import annotations

from typing import Iterable, Union

import numpy as np


class _Extreme:
    __slots__ = ("name", "symbol")

    def __init__(self, name: str, symbol: str):
        self.name = name
        self.symbol = symbol

    def __repr__(self) -> str:
        return self.symbol

    def __reduce__(self):
        return (_extreme, (self.name,))


def _extreme(name: str) -> "_Extreme":
    return BOTTOM if name == "bottom" else TOP


BOTTOM = _Extreme("bottom", "⊥")
TOP = _Extreme("top", "⊤")
Tag = Union[_Extreme, tuple]

BOTTOM_ID = 0
TOP_ID = 1
ID_DTYPE = np.int32


def is_tuple(t: Tag) -> bool:
    return isinstance(t, tuple)


def merge(t1: Tag, t2: Tag) -> Tag:
    """Least upper bound: equal tags stay, bottom is the identity, anything else is top."""
    if t1 is BOTTOM:
        return t2
    if t2 is BOTTOM:
        return t1
    if t1 is TOP or t2 is TOP:
        return TOP
    return t1 if t1 == t2 else TOP


def leq(t1: Tag, t2: Tag) -> bool:
    return t1 is BOTTOM or t2 is TOP or (is_tuple(t1) and is_tuple(t2) and t1 == t2)


def merge_all(tags: Iterable[Tag]) -> Tag:
    out: Tag = BOTTOM
    for t in tags:
        out = merge(out, t)
    return out


# --- interned ids ------------------------------------------------------------


class TagTable:
    """Interns tag tuples to small integer ids (0 and 1 are reserved)."""

    def __init__(self) -> None:
        self._ids: dict[tuple, int] = {}
        self._tuples: list = [BOTTOM, TOP]

    def __len__(self) -> int:
        return len(self._tuples)

    def intern(self, tag: Tag) -> int:
        if tag is BOTTOM:
            return BOTTOM_ID
        if tag is TOP:
            return TOP_ID
        key = tuple(int(x) for x in tag)
        found = self._ids.get(key)
        if found is None:
            found = len(self._tuples)
            self._ids[key] = found
            self._tuples.append(key)
        return found

    def intern_rows(self, rows: np.ndarray) -> np.ndarray:
        """Intern each row of an (N, k) integer matrix; returns (N,) ids."""
        rows = np.asarray(rows, dtype=np.int64)
        if rows.shape[0] == 0:
            return np.zeros(0, dtype=ID_DTYPE)
        uniq, inverse = np.unique(rows, axis=0, return_inverse=True)
        ids = np.fromiter((self.intern(tuple(r)) for r in uniq.tolist()), dtype=ID_DTYPE, count=len(uniq))
        return ids[inverse.reshape(-1)]

    def lookup(self, tag_id: int) -> Tag:
        return self._tuples[int(tag_id)]

    def to_json(self, tag_id: int):
        t = self.lookup(tag_id)
        if t is BOTTOM:
            return "bottom"
        if t is TOP:
            return "top"
        return list(t)


def merge_ids(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=ID_DTYPE)
    b = np.asarray(b, dtype=ID_DTYPE)
    return np.where(a == b, a, np.where(a == BOTTOM_ID, b, np.where(b == BOTTOM_ID, a, TOP_ID))).astype(ID_DTYPE)


def leq_ids(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a == b) | (a == BOTTOM_ID) | (b == TOP_ID)


def fold_ids(tags: np.ndarray, axis: int = -1) -> np.ndarray:
    """Merge-reduce along ``axis`` (e.g. the bytes of an element)."""
    tags = np.asarray(tags, dtype=ID_DTYPE)
    present = tags != BOTTOM_ID
    hi = np.where(present, tags, -1).max(axis=axis)
    lo = np.where(present, tags, np.iinfo(ID_DTYPE).max).min(axis=axis)
    out = np.where(lo == hi, hi, TOP_ID)
    return np.where(present.any(axis=axis), out, BOTTOM_ID).astype(ID_DTYPE)


def scatter_merge(target: np.ndarray, keys: np.ndarray, values: np.ndarray) -> None:
    """In place: ``target[k] = merge(target[k], values...)`` for every (possibly repeated) key."""
    keys = np.asarray(keys, dtype=np.int64).reshape(-1)
    values = np.asarray(values, dtype=ID_DTYPE).reshape(-1)
    if keys.size == 0:
        return
    uniq, inverse = np.unique(keys, return_inverse=True)
    present = values != BOTTOM_ID
    hi = np.full(len(uniq), -1, dtype=np.int64)
    lo = np.full(len(uniq), np.iinfo(np.int64).max, dtype=np.int64)
    np.maximum.at(hi, inverse[present], values[present])
    np.minimum.at(lo, inverse[present], values[present])
    incoming = np.where(hi < 0, BOTTOM_ID, np.where(lo == hi, hi, TOP_ID)).astype(ID_DTYPE)
    target[uniq] = merge_ids(target[uniq], incoming)


def reinterpret_ids(byte_tags: np.ndarray, new_element_bytes: int) -> np.ndarray:
    """Per-element tags of a byte-tag array (..., nbytes) read with a new element width."""
    n = byte_tags.shape[-1]
    if new_element_bytes <= 0 or n % new_element_bytes:
        raise ValueError(f"element width {new_element_bytes} does not divide {n} bytes")
    grouped = byte_tags.reshape(byte_tags.shape[:-1] + (n // new_element_bytes, new_element_bytes))
    return fold_ids(grouped, axis=-1)


def add_writer(writers: np.ndarray, keys: np.ndarray, point_id: int) -> None:
    """Record ``point_id`` in the capped writer sets ``writers[k, :]`` (-1 marks a free slot)."""
    keys = np.unique(np.asarray(keys, dtype=np.int64).reshape(-1))
    if keys.size == 0:
        return
    rows = writers[keys]
    fresh = ~(rows == point_id).any(axis=1)
    free = rows == -1
    has_free = free.any(axis=1)
    slot = free.argmax(axis=1)
    sel = fresh & has_free
    writers[keys[sel], slot[sel]] = point_id


def union_writers(rows: np.ndarray, cap: int = 4) -> list[int]:
    """Sorted union of writer ids from several (.., cap) rows, capped."""
    vals = sorted({int(v) for v in np.asarray(rows).reshape(-1) if v >= 0})
    return vals[:cap]
