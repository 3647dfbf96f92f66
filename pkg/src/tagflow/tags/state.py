"""Byte-granular abstract memory shared by the static engine and the interpreter."""

from __future__ import annotations

import numpy as np

from ..dsl.expr import ExprError, evaluate
from ..ir.nodes import Access, KernelIr, MemDecl, TagBinding
from ..ir.threads import ThreadSpace, byte_addresses
from .lattice import BOTTOM_ID, ID_DTYPE, Tag, TagTable, fold_ids, reinterpret_ids

WRITER_CAP = 4


class TagError(ValueError):
    pass


def storage_rows(space: ThreadSpace, mem_space: str) -> np.ndarray:
    """Row of the backing array each thread uses for a memory space."""
    if mem_space == "register":
        return space.gid
    if mem_space == "shared":
        return space.block
    return np.zeros(space.size, dtype=np.int64)


def access_bytes(ir: KernelIr, space: ThreadSpace, access: Access, quantifiers: tuple = ()):
    """(rows, addresses) indexing the root array; both broadcast to (threads, *q, element_bytes)."""
    decl = ir.decls[access.decl]
    offs = space.offsets(access, quantifiers)
    addrs = byte_addresses(offs, decl.element_bytes)
    rows = storage_rows(space, decl.space).reshape((-1,) + (1,) * (addrs.ndim - 1))
    return np.broadcast_to(rows, addrs.shape), addrs


class TagState:
    """Tag per byte for every root declaration, plus last-writer provenance.

    Registers hold one row per thread, shared memory one row per block and
    global tensors a single row.  Register writers are a single program point
    per byte; shared writers are capped sets (``WRITER_CAP`` slots, -1 free).
    """

    def __init__(self, ir: KernelIr, table: TagTable | None = None):
        self.ir = ir
        self.table = table or TagTable()
        g, b = ir.total_threads, ir.nblocks
        self.tags: dict[str, np.ndarray] = {}
        self.writers: dict[str, np.ndarray] = {}
        for d in ir.roots():
            rows = {"register": g, "shared": b, "global": 1}[d.space]
            self.tags[d.name] = np.zeros((rows, d.nbytes), dtype=ID_DTYPE)
            if d.space == "shared":
                self.writers[d.name] = np.full((rows * d.nbytes, WRITER_CAP), -1, dtype=np.int32)
            elif d.space == "register":
                self.writers[d.name] = np.full((rows, d.nbytes), -1, dtype=np.int32)

    def decl(self, name: str) -> MemDecl:
        return self.ir.decls[name]

    def root(self, name: str) -> MemDecl:
        return self.ir.root_of(name)

    def reset_shared(self, decl_name: str) -> None:
        """All bytes of a shared declaration become bottom; provenance is cleared."""
        decl = self.decl(decl_name)
        if decl.space != "shared":
            raise TagError(f"cannot reset {decl.space} declaration '{decl_name}'")
        root = self.root(decl_name)
        self.tags[root.name][:] = BOTTOM_ID
        self.writers[root.name][:] = -1

    def clear(self, decl_name: str) -> None:
        root = self.root(decl_name)
        self.tags[root.name][:] = BOTTOM_ID
        if root.name in self.writers:
            self.writers[root.name][:] = -1

    def reinterpret(self, decl_name: str, new_element_bytes: int, row: int = 0) -> np.ndarray:
        """Per-element tag ids of one row of a declaration read with a different width."""
        root = self.root(decl_name)
        return reinterpret_ids(self.tags[root.name][row], new_element_bytes)

    def element_tag(self, decl_name: str, byte_offset: int, nbytes: int, row: int = 0) -> Tag:
        root = self.root(decl_name)
        ids = self.tags[root.name][row, byte_offset:byte_offset + nbytes]
        return self.table.lookup(int(fold_ids(ids)))

    def writer_rows(self, root: MemDecl, rows: np.ndarray, addrs: np.ndarray) -> np.ndarray:
        """Writer ids for the addressed bytes, shape (..., WRITER_CAP)."""
        w = self.writers.get(root.name)
        if w is None:
            return np.full(addrs.shape + (WRITER_CAP,), -1, dtype=np.int32)
        if root.space == "shared":
            return w[rows * root.nbytes + addrs]
        out = np.full(addrs.shape + (WRITER_CAP,), -1, dtype=np.int32)
        out[..., 0] = w[rows, addrs]
        return out


def tag_binding_ids(ir: KernelIr, table: TagTable, binding: TagBinding, space: ThreadSpace):
    """Evaluate a tag function over every element of its declaration.

    Returns ``(rows, ids, offsets)``: ``ids`` has shape (len(rows), elements)
    and ``offsets`` gives each element's first byte in the root storage.
    """
    decl = ir.decls[binding.decl]
    extents = decl.extents
    coords = np.indices(extents, dtype=np.int64).reshape(len(extents), -1)
    nelem = coords.shape[1]
    env: dict = {v: coords[i].reshape(1, -1) for i, v in enumerate(binding.vars)}
    if decl.space == "register":
        env.update(space.env(1))
        nrows = space.size
    elif decl.space == "shared":
        blocks = np.arange(ir.nblocks, dtype=np.int64).reshape(-1, 1)
        env["$bx"] = blocks % ir.grid[0]
        env["$by"] = blocks // ir.grid[0]
        nrows = ir.nblocks
    else:
        nrows = 1
    comps = []
    for x in binding.exprs:
        try:
            val = evaluate(x, env)
        except ExprError as exc:
            raise TagError(f"tag function '{binding.name}' on '{decl.name}' ({decl.space}): {exc}") from None
        comps.append(np.broadcast_to(np.asarray(val, dtype=np.int64), (nrows, nelem)))
    matrix = np.stack(comps, axis=-1).reshape(-1, len(comps))
    ids = table.intern_rows(matrix).reshape(nrows, nelem)
    offsets = np.asarray(decl.layout.eval_unchecked(list(coords)), dtype=np.int64) * decl.element_bytes
    return nrows, ids, offsets


def stamp_binding(state: TagState, binding: TagBinding, space: ThreadSpace, point_id: int) -> None:
    decl = state.decl(binding.decl)
    root = state.root(binding.decl)
    nrows, ids, offsets = tag_binding_ids(state.ir, state.table, binding, space)
    addrs = byte_addresses(offsets, decl.element_bytes).reshape(-1)
    vals = np.repeat(ids, decl.element_bytes, axis=1)
    if root.space == "register":
        rows = space.gid
    else:
        rows = np.arange(nrows)
    state.tags[root.name][rows[:, None], addrs[None, :]] = vals
    if root.space == "register":
        state.writers[root.name][rows[:, None], addrs[None, :]] = point_id
    elif root.space == "shared":
        keys = (rows[:, None] * root.nbytes + addrs[None, :]).reshape(-1)
        w = state.writers[root.name]
        w[keys] = -1
        w[keys, 0] = point_id


def apply_tag_decl(binding: TagBinding, coord, thread_env: dict | None = None) -> tuple:
    """The tag tuple a tag function assigns to one coordinate."""
    if len(coord) != len(binding.vars):
        raise TagError(f"tag function '{binding.name}' expects {len(binding.vars)} coordinates")
    env = dict(thread_env or {})
    env.update({v: int(c) for v, c in zip(binding.vars, coord)})
    try:
        return tuple(int(evaluate(x, env)) for x in binding.exprs)
    except ExprError as exc:
        raise TagError(f"tag function '{binding.name}': {exc}") from None
