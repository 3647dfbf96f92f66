"""Memory-safety validation by enumeration over every thread and instance."""

from __future__ import annotations

import numpy as np

from ..layout import view_compatible
from .nodes import (
    Access, Assertion, Binary, Concat, KernelIr, Load, Matmul, ProgramPoint, Select, Store, TagBinding,
    Unary, ViewAlias,
)
from .threads import ThreadSpace


class MemorySafetyError(ValueError):
    def __init__(self, message: str, point: ProgramPoint | None = None, thread: int | None = None,
                 block: int | None = None, offset: int | None = None, tile: str | None = None):
        self.message = message
        self.point = point
        self.thread = thread
        self.block = block
        self.offset = offset
        self.tile = tile
        where = f"line {point.line} (stmt {point.stmt}, instance {list(point.instance)})" if point else ""
        who = f", block {block} thread {thread}" if thread is not None else ""
        super().__init__(f"{where}{who}: {message}" if where else message)


def value_accesses(v) -> list[Access]:
    if isinstance(v, Load):
        return [v.access]
    if isinstance(v, Concat):
        return [p.access for p in v.parts]
    if isinstance(v, Unary):
        return value_accesses(v.x)
    if isinstance(v, (Binary, Select)):
        return value_accesses(v.a) + value_accesses(v.b)
    return []


def node_accesses(node) -> list[tuple[Access, tuple]]:
    """Every (access, quantifiers) a node touches."""
    if isinstance(node, Store):
        return [(node.dst, ())] + [(a, ()) for a in value_accesses(node.value)]
    if isinstance(node, Matmul):
        return [(a, ()) for a in node.dst + node.a + node.b + node.c]
    if isinstance(node, Assertion):
        return [(node.left, node.quantifiers), (node.right, node.quantifiers)]
    return []


def _check_access(ir: KernelIr, space: ThreadSpace, node, access: Access, quants: tuple) -> None:
    decl = ir.decls[access.decl]
    root = ir.root_of(access.decl)
    coords = space.coords(access, quants)
    bad = np.zeros(coords[0].shape if coords else (space.size,), dtype=bool)
    for c, ext in zip(coords, decl.extents):
        bad |= c < 0
        if ext is not None:
            bad |= c >= ext
    offs = np.asarray(decl.layout.eval_unchecked(coords), dtype=np.int64) * decl.element_bytes
    bad |= (offs < 0) | (offs + decl.element_bytes > root.nbytes)
    if not bad.any():
        return
    flat = int(np.flatnonzero(bad.reshape(-1))[0])
    pos = np.unravel_index(flat, bad.shape)
    g = pos[0]
    coord = tuple(int(c[pos]) for c in coords)
    qual = {var: int(pos[i + 1]) for i, (var, _) in enumerate(quants)}
    extra = f" with {qual}" if qual else ""
    raise MemorySafetyError(
        f"out-of-bounds access {access.decl}{list(coord)}{extra} (byte offset {int(offs[pos])}, "
        f"'{root.name}' holds {root.nbytes} bytes, extents {list(decl.extents)})",
        node.point, int(space.tid[g]), int(space.block[g]), int(offs[pos]), access.decl,
    )


def validate_memory_safety(ir: KernelIr) -> None:
    """Raise MemorySafetyError for the first unsafe view or access in program and thread order."""
    space = ThreadSpace(ir)
    for node in ir.nodes:
        if isinstance(node, ViewAlias):
            src, dst = ir.decls[node.source], ir.decls[node.decl]
            if not view_compatible(src.layout, dst.layout):
                raise MemorySafetyError(
                    f"incompatible view '{dst.name}' of '{src.name}': "
                    f"{src.nbytes} bytes as {src.layout} {src.dtype} vs {dst.nbytes} bytes as "
                    f"{dst.layout} {dst.dtype}", node.point, tile=dst.name)
            continue
        if isinstance(node, TagBinding):
            continue
        for access, quants in node_accesses(node):
            _check_access(ir, space, node, access, quants)
