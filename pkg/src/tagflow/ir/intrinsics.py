"""Matrix-core intrinsic descriptors loaded from data files.

File format (one record per line, ``#`` starts a comment)::

    name <identifier>
    shape <M> <N> <K>
    lanes <L>
    slots <S>
    accumulators <R>
    operand_dtype <dtype>
    accumulator_dtype <dtype>
    A <lane> <slot> <row> <col>      # L*S rows, A is M x K
    B <lane> <slot> <row> <col>      # L*S rows, B is K x N
    C <lane> <acc> <row> <col>       # L*R rows, C is M x N

Every (lane, slot) pair must appear exactly once per operand and the rows must
cover each operand tile exactly once.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np


class DescriptorError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class IntrinsicDescriptor:
    name: str
    m: int
    n: int
    k: int
    lanes: int
    slots: int
    accumulators: int
    operand_dtype: str
    accumulator_dtype: str
    a_map: np.ndarray  # (lanes, slots, 2) -> (row, col) in the M x K tile
    b_map: np.ndarray  # (lanes, slots, 2) -> (row, col) in the K x N tile
    c_map: np.ndarray  # (lanes, accumulators, 2) -> (row, col) in the M x N tile

    def covering_errors(self) -> list[str]:
        errs = []
        for label, table, rows, cols, per_lane in (
            ("A", self.a_map, self.m, self.k, self.slots),
            ("B", self.b_map, self.k, self.n, self.slots),
            ("C", self.c_map, self.m, self.n, self.accumulators),
        ):
            if table.shape != (self.lanes, per_lane, 2):
                errs.append(f"{label}: expected {self.lanes}x{per_lane} entries, got {table.shape[:2]}")
                continue
            r, c = table[..., 0].ravel(), table[..., 1].ravel()
            if r.min() < 0 or r.max() >= rows or c.min() < 0 or c.max() >= cols:
                errs.append(f"{label}: position outside the {rows}x{cols} tile")
                continue
            counts = np.bincount(r * cols + c, minlength=rows * cols)
            if np.any(counts != 1):
                bad = int(np.flatnonzero(counts != 1)[0])
                errs.append(
                    f"{label}: cell ({bad // cols},{bad % cols}) covered {int(counts[bad])} times"
                )
        return errs


def parse_descriptor(text: str, origin: str = "<string>") -> IntrinsicDescriptor:
    header: dict[str, list[str]] = {}
    rows: dict[str, list[tuple[int, int, int, int]]] = {"A": [], "B": [], "C": []}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0]
        if key in rows:
            if len(parts) != 5:
                raise DescriptorError(f"{origin}:{lineno}: expected '{key} lane slot row col'")
            try:
                rows[key].append(tuple(int(x) for x in parts[1:]))  # type: ignore[arg-type]
            except ValueError:
                raise DescriptorError(f"{origin}:{lineno}: non-integer field") from None
        else:
            header[key] = parts[1:]
    try:
        name = header["name"][0]
        m, n, k = (int(x) for x in header["shape"])
        lanes = int(header["lanes"][0])
        slots = int(header["slots"][0])
        accs = int(header["accumulators"][0])
        op_dtype = header.get("operand_dtype", ["bf16"])[0]
        acc_dtype = header.get("accumulator_dtype", ["fp32"])[0]
    except (KeyError, IndexError, ValueError) as exc:
        raise DescriptorError(f"{origin}: missing or malformed header field ({exc})") from None

    def table(key: str, per_lane: int) -> np.ndarray:
        out = np.full((lanes, per_lane, 2), -1, dtype=np.int64)
        seen = np.zeros((lanes, per_lane), dtype=bool)
        for lane, slot, r, c in rows[key]:
            if not (0 <= lane < lanes and 0 <= slot < per_lane):
                raise DescriptorError(f"{origin}: {key} entry for lane {lane} slot {slot} out of range")
            if seen[lane, slot]:
                raise DescriptorError(f"{origin}: duplicate {key} entry for lane {lane} slot {slot}")
            seen[lane, slot] = True
            out[lane, slot] = (r, c)
        if not seen.all():
            lane, slot = map(int, np.argwhere(~seen)[0])
            raise DescriptorError(f"{origin}: missing {key} entry for lane {lane} slot {slot}")
        return out

    desc = IntrinsicDescriptor(
        name, m, n, k, lanes, slots, accs, op_dtype, acc_dtype,
        table("A", slots), table("B", slots), table("C", accs),
    )
    errs = desc.covering_errors()
    if errs:
        raise DescriptorError(f"{origin}: " + "; ".join(errs))
    return desc


_CACHE: dict[str, IntrinsicDescriptor] = {}


def load_descriptor(name_or_path: str | Path = "mfma_32x32x8_bf16") -> IntrinsicDescriptor:
    """Load a shipped descriptor by name, or any descriptor file by path."""
    key = str(name_or_path)
    if key in _CACHE:
        return _CACHE[key]
    path = Path(key)
    if path.suffix == ".txt" or path.exists():
        text = path.read_text()
    else:
        try:
            text = resources.files("tagflow.data").joinpath(f"{key}.txt").read_text()
        except FileNotFoundError:
            raise DescriptorError(f"unknown intrinsic descriptor {key!r}") from None
    desc = parse_descriptor(text, key)
    _CACHE[key] = desc
    return desc
