"""Static tag propagation over the unrolled IR.

The pass walks the IR in program order once, handling every thread of the
launch in each step:

* registers take strong updates (each thread owns its bytes);
* shared stores are weak: the stored tag is merged into the byte's current
  tag, so every store of a phase (and of earlier phases, until a ``reset``)
  contributes regardless of thread order;
* a shared byte read in the same phase in which a thread of a *different*
  warp writes it is ``top``: depending on warp order the read may see either
  value (lanes of one warp run in lockstep, so their program order is exact);
* ``reset`` takes effect at the start of its phase;
* loads from global tensors take their tag function's value once the tag
  statement has executed, and bottom otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..ir.nodes import (
    Access, Alloc, Assertion, Binary, Concat, Const, IndexValue, KernelIr, Load, Matmul, Reset, Select,
    Store, TagBinding, Unary,
)
from ..ir.threads import ThreadSpace
from .lattice import ID_DTYPE, TOP_ID, TagTable, add_writer, fold_ids, merge_ids, scatter_merge
from .state import TagState, access_bytes, stamp_binding


@dataclass
class SiteTags:
    """Byte tags of one operand at one captured site, for every thread."""

    byte_tags: np.ndarray  # (threads, *elements, element_bytes)
    writers: np.ndarray  # (threads, *elements, element_bytes, cap)

    @property
    def element_tags(self) -> np.ndarray:
        return fold_ids(self.byte_tags, axis=-1)


@dataclass
class TagTrace:
    ir: KernelIr
    table: TagTable
    sites: dict = field(default_factory=dict)  # (node index, role) -> SiteTags

    def site(self, node_index: int, role: str) -> SiteTags:
        return self.sites[(node_index, role)]

    def roles(self, node_index: int) -> list[str]:
        return [r for (i, r) in self.sites if i == node_index]


class _Propagator:
    def __init__(self, ir: KernelIr, extra: list, input_tags: dict | None, table: TagTable | None):
        self.ir = ir
        self.space = ThreadSpace(ir)
        self.state = TagState(ir, table)
        self.table = self.state.table
        self.trace = TagTrace(ir, self.table)
        self.extra = extra
        self.input_tags = input_tags or {}
        self.race: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    # --- reads -------------------------------------------------------------

    def read(self, access: Access, quants: tuple = ()):
        ir, st = self.ir, self.state
        root = ir.root_of(access.decl)
        rows, addrs = access_bytes(ir, self.space, access, quants)
        tags = st.tags[root.name][rows, addrs]
        if root.space == "shared" and root.name in self.race:
            lo, hi = self.race[root.name]
            keys = rows * root.nbytes + addrs
            warp = self.space.warp.reshape((-1,) + (1,) * (addrs.ndim - 1))
            w_lo, w_hi = lo[keys], hi[keys]
            raced = (w_lo >= 0) & ((w_lo != warp) | (w_hi != warp))
            tags = np.where(raced, TOP_ID, tags).astype(ID_DTYPE)
        return tags, st.writer_rows(root, rows, addrs)

    def value_bytes(self, v, nbytes: int) -> np.ndarray:
        g = self.space.size
        if isinstance(v, Load):
            return self.read(v.access)[0]
        if isinstance(v, (Const, IndexValue)):
            return np.zeros((g, nbytes), dtype=ID_DTYPE)
        if isinstance(v, Select):
            return merge_ids(self.value_bytes(v.a, nbytes), self.value_bytes(v.b, nbytes))
        if isinstance(v, Concat):
            chunks = []
            for p in v.parts:
                b = self.read(p.access)[0]
                half = b.shape[-1] // 2
                chunks.append(b if p.half == "all" else (b[:, :half] if p.half == "lo" else b[:, half:]))
            return np.concatenate(chunks, axis=-1)
        raise TypeError(f"not a copy value: {v!r}")

    def value_element(self, v) -> np.ndarray:
        g = self.space.size
        if isinstance(v, Load):
            return fold_ids(self.read(v.access)[0])
        if isinstance(v, (Const, IndexValue)):
            return np.zeros(g, dtype=ID_DTYPE)
        if isinstance(v, Unary):
            return self.value_element(v.x)
        if isinstance(v, (Binary, Select)):
            return merge_ids(self.value_element(v.a), self.value_element(v.b))
        if isinstance(v, Concat):
            return fold_ids(self.value_bytes(v, 0))
        raise TypeError(f"not a value: {v!r}")

    # --- writes ------------------------------------------------------------

    def write(self, access: Access, tags: np.ndarray, point_id: int) -> None:
        ir, st = self.ir, self.state
        root = ir.root_of(access.decl)
        if root.space == "global":
            return  # global writes are not tracked
        rows, addrs = access_bytes(ir, self.space, access)
        if root.space == "register":
            st.tags[root.name][rows, addrs] = tags
            st.writers[root.name][rows, addrs] = point_id
        else:
            keys = rows * root.nbytes + addrs
            flat = st.tags[root.name].reshape(-1)
            scatter_merge(flat, keys, tags)
            add_writer(st.writers[root.name], keys, point_id)

    # --- phases ------------------------------------------------------------

    def prepare_phase(self, nodes: list) -> None:
        """Apply resets and collect the range of writing warps per shared byte."""
        self.race = {}
        for n in nodes:
            if isinstance(n, Reset):
                self.state.reset_shared(n.decl)
        for n in nodes:
            targets: list[Access] = []
            if isinstance(n, Store):
                targets = [n.dst]
            elif isinstance(n, Matmul):
                targets = list(n.dst)
            for acc in targets:
                root = self.ir.root_of(acc.decl)
                if root.space != "shared":
                    continue
                rows, addrs = access_bytes(self.ir, self.space, acc)
                keys = (rows * root.nbytes + addrs).reshape(-1)
                gids = np.broadcast_to(self.space.warp[:, None], addrs.shape).reshape(-1)
                if root.name not in self.race:
                    size = self.state.tags[root.name].size
                    self.race[root.name] = (np.full(size, -1, dtype=np.int64), np.full(size, -1, dtype=np.int64))
                lo, hi = self.race[root.name]
                big = np.where(lo < 0, np.iinfo(np.int64).max, lo)
                np.minimum.at(big, keys, gids)
                lo[:] = np.where(big == np.iinfo(np.int64).max, -1, big)
                np.maximum.at(hi, keys, gids)

    def run(self) -> TagTrace:
        ir, st = self.ir, self.state
        for name, ids in self.input_tags.items():
            root = ir.root_of(name)
            st.tags[root.name][0, :] = np.asarray(ids, dtype=ID_DTYPE).reshape(-1)
        for b in self.extra:
            stamp_binding(st, b, self.space, -1)
        for start, stop in ir.phase_ranges():
            self.prepare_phase(ir.nodes[start:stop])
            for i in range(start, stop):
                self.step(i, ir.nodes[i])
        return self.trace

    def step(self, i: int, n) -> None:
        st = self.state
        if isinstance(n, Alloc):
            st.clear(n.decl)
        elif isinstance(n, TagBinding):
            root = self.ir.root_of(n.decl)
            if root.space == "global" and root.name in self.input_tags:
                return
            stamp_binding(st, n, self.space, i)
        elif isinstance(n, Store):
            eb = self.ir.decls[n.dst.decl].element_bytes
            if n.numeric:
                tags = np.repeat(self.value_element(n.value)[:, None], eb, axis=1)
            else:
                tags = self.value_bytes(n.value, eb)
            self.write(n.dst, tags, i)
        elif isinstance(n, Matmul):
            for role, region in (("a", n.a), ("b", n.b), ("c", n.c)):
                self.capture_region(i, role, region)
            ctags = [self.read(acc)[0] for acc in n.c]
            for acc, tags in zip(n.dst, ctags):
                self.write(acc, tags, i)
        elif isinstance(n, Assertion):
            for role, acc in (("left", n.left), ("right", n.right)):
                tags, writers = self.read(acc, n.quantifiers)
                self.trace.sites[(i, role)] = SiteTags(tags, writers)

    def capture_region(self, i: int, role: str, region: tuple) -> None:
        parts = [self.read(acc) for acc in region]
        tags = np.stack([p[0] for p in parts], axis=1)
        writers = np.stack([p[1] for p in parts], axis=1)
        self.trace.sites[(i, role)] = SiteTags(tags, writers)


def propagate(ir: KernelIr, decls: list | None = None, input_tags: dict | None = None,
              table: TagTable | None = None) -> TagTrace:
    """Run the static analysis and capture tags at every assertion and matmul site.

    ``decls`` adds tag functions (``TagBinding`` nodes) applied before the first
    statement; ``input_tags`` replaces the byte tags of named global tensors
    outright (used to probe monotonicity).
    """
    return _Propagator(ir, list(decls or []), input_tags, table).run()

