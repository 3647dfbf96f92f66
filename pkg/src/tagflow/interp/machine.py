"""Reference interpreter with optional dynamic tag tracking.

Schedule: within each barrier phase, warps run to the phase boundary one at a
time in ascending global warp id; the lanes of a warp run in lockstep, so a
matmul sees the operands of all 64 lanes at once.  When two lanes of a warp
store to the same byte in one statement the higher thread id wins.

Running warps one by one is exact but slow, so each phase is split into
chunks of consecutive warps that touch no shared or global byte in common
where at least one of them writes it.  Executing a chunk in lockstep is then
indistinguishable from running its warps in order.

Dynamic tags use strong updates everywhere: a store replaces the tags of the
bytes it writes and a ``reset`` clears a shared tile at the start of its
phase.  A select merges the tags of both arms, like the static rule, so the
two analyses differ only in how they treat the schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dsl.expr import evaluate
from ..dtypes import decode, encode, is_numeric
from ..ir.nodes import (
    Access, Alloc, Assertion, Barrier, Binary, Concat, Const, IndexValue, KernelIr, Load, Matmul,
    ProgramPoint, Reset, Select, Store, TagBinding, Unary,
)
from ..ir.safety import node_accesses, validate_memory_safety
from ..ir.threads import ThreadSpace
from ..tags.lattice import BOTTOM_ID, ID_DTYPE, Tag, TagTable, fold_ids, merge_ids
from ..tags.state import TagState, access_bytes, stamp_binding
from .tensorio import TensorValue

DEFAULT_COST_WEIGHTS = {"global_bytes": 1.0, "shared_bytes": 0.25, "barriers": 50.0, "instances": 0.01}


class InterpError(ValueError):
    pass


@dataclass
class CostCounters:
    """Work done by one run.

    Bytes count every element moved per thread; ``barriers`` counts one per
    block per barrier; ``instances`` counts per-thread store and matmul
    executions.
    """

    global_bytes: int = 0
    shared_bytes: int = 0
    barriers: int = 0
    instances: int = 0

    def cost(self, weights: dict | None = None) -> float:
        w = DEFAULT_COST_WEIGHTS if weights is None else {**DEFAULT_COST_WEIGHTS, **weights}
        return float(sum(w[k] * getattr(self, k) for k in DEFAULT_COST_WEIGHTS))

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in DEFAULT_COST_WEIGHTS}


@dataclass(frozen=True)
class LogRecord:
    point: ProgramPoint
    node: int
    kind: str  # "store" or "read"
    role: str  # "" for stores; "left"/"right"/"a"/"b"/"c" for reads
    thread: int
    decl: str
    byte: int  # index into the root storage of ``decl``
    tag: Tag


@dataclass
class DynamicTagLog:
    """Tags observed during a run.

    ``sites`` holds per-byte tags read at every assertion operand and matmul
    operand, with the same shapes as the static engine's captures.  ``stores``
    holds the tags written by every store into shared memory (all stores when
    the run logs registers too).
    """

    ir: KernelIr
    table: TagTable
    sites: dict = field(default_factory=dict)  # (node, role) -> (threads, *elems, bytes)
    site_addrs: dict = field(default_factory=dict)  # (node, role) -> (decl, addresses)
    stores: list = field(default_factory=list)  # (node, root, gids (N,), addrs (N, eb), tags (N, eb))

    def site(self, node_index: int, role: str) -> np.ndarray:
        return self.sites[(node_index, role)]

    def tag(self, tag_id: int) -> Tag:
        return self.table.lookup(tag_id)

    def records(self):
        """Every logged read and store, ordered as executed: (phase, warp, node, thread, byte)."""
        ir = self.ir
        gids = np.arange(ir.total_threads, dtype=np.int64)
        warp = ThreadSpace(ir).warp
        rows = []
        for (i, role), tags in self.sites.items():
            decl, addrs = self.site_addrs[(i, role)]
            g = np.broadcast_to(gids.reshape((-1,) + (1,) * (tags.ndim - 1)), tags.shape)
            rows.append((i, "read", role, decl, g, addrs, tags))
        for i, root, g, addrs, tags in self.stores:
            rows.append((i, "store", "", root, np.broadcast_to(g[:, None], addrs.shape), addrs, tags))
        flat = []
        for i, kind, role, decl, g, a, t in rows:
            phase = ir.nodes[i].phase
            for gg, aa, tt in zip(g.reshape(-1).tolist(), a.reshape(-1).tolist(), t.reshape(-1).tolist()):
                flat.append(((phase, int(warp[gg]), i, kind == "read", gg, aa), kind, role, decl, tt))
        flat.sort(key=lambda e: e[0])
        for key, kind, role, decl, tt in flat:
            yield LogRecord(ir.nodes[key[2]].point, key[2], kind, role, key[4], decl, key[5], self.table.lookup(tt))


@dataclass
class RunResult:
    outputs: dict  # name -> TensorValue for every global tensor
    counters: CostCounters
    log: DynamicTagLog | None = None


class _Machine:
    def __init__(self, ir: KernelIr, inputs: dict, track_tags: bool, decls: list, input_tags: dict | None,
                 table: TagTable | None, log_registers: bool):
        self.ir = ir
        self.full = ThreadSpace(ir)
        self.counters = CostCounters()
        self.track = track_tags
        self.log_registers = log_registers
        self.mem: dict[str, np.ndarray] = {}
        for d in ir.roots():
            rows = {"register": ir.total_threads, "shared": ir.nblocks, "global": 1}[d.space]
            self.mem[d.name] = np.zeros((rows, d.nbytes), dtype=np.uint8)
        globals_ = {d.name: d for d in ir.roots("global")}
        for name, t in inputs.items():
            if name not in globals_:
                raise InterpError(f"input '{name}' is not a global tensor of kernel '{ir.name}'")
            d = globals_[name]
            if not isinstance(t, TensorValue):
                raise InterpError(f"input '{name}' must be a TensorValue")
            if t.dtype != d.dtype or tuple(t.shape) != tuple(d.extents):
                raise InterpError(
                    f"input '{name}' is {t.dtype}{list(t.shape)}, kernel expects {d.dtype}{list(d.extents)}"
                )
            self.mem[name][0] = np.frombuffer(t.data, dtype=np.uint8)
        self.decls_extra = list(decls or [])
        self.input_tags = dict(input_tags or {})
        if track_tags:
            self.tags = TagState(ir, table)
            self.log = DynamicTagLog(ir, self.tags.table)
        else:
            self.tags = None
            self.log = None
        base = 0
        self.key_base: dict[str, int] = {}
        for d in ir.roots():
            if d.space != "register":
                self.key_base[d.name] = base
                base += self.mem[d.name].size

    # --- memory ------------------------------------------------------------

    def read(self, space: ThreadSpace, access: Access, quants: tuple = (), count: bool = True):
        root = self.ir.root_of(access.decl)
        rows, addrs = access_bytes(self.ir, space, access, quants)
        vals = self.mem[root.name][rows, addrs]
        if count:
            self.count_bytes(root.space, addrs.size)
        tags = self.tags.tags[root.name][rows, addrs] if self.track else None
        return vals, tags

    def count_bytes(self, mem_space: str, n: int) -> None:
        if mem_space == "global":
            self.counters.global_bytes += int(n)
        elif mem_space == "shared":
            self.counters.shared_bytes += int(n)

    def write(self, i: int, space: ThreadSpace, access: Access, vals: np.ndarray, tags: np.ndarray | None) -> None:
        root = self.ir.root_of(access.decl)
        rows, addrs = access_bytes(self.ir, space, access)
        self.count_bytes(root.space, addrs.size)
        keys = (rows * root.nbytes + addrs).reshape(-1)
        vals = vals.reshape(-1)
        pick = None
        if len(space.gid) > 1:
            uniq_rev, first_rev = np.unique(keys[::-1], return_index=True)
            if len(uniq_rev) < len(keys):
                pick = len(keys) - 1 - first_rev  # last writer in thread order
        sel = slice(None) if pick is None else pick
        self.mem[root.name].reshape(-1)[keys[sel]] = vals[sel]
        if self.track:
            self.tags.tags[root.name].reshape(-1)[keys[sel]] = tags.reshape(-1)[sel]
            if root.space == "shared" or (self.log_registers and root.space == "register"):
                self.log.stores.append((i, root.name, space.gid.copy(), addrs.copy(), tags.copy()))

    # --- values ------------------------------------------------------------

    def numeric(self, space: ThreadSpace, v):
        n = space.size
        if isinstance(v, Load):
            raw, t = self.read(space, v.access)
            dtype = self.ir.decls[v.access.decl].dtype
            return decode(raw, dtype), (fold_ids(t) if self.track else None)
        if isinstance(v, Const):
            return np.full(n, float(v.value)), self.bottom(n)
        if isinstance(v, IndexValue):
            val = evaluate(v.expr, space.env())
            return np.broadcast_to(np.asarray(val, dtype=np.float64), (n,)).copy(), self.bottom(n)
        with np.errstate(all="ignore"):
            if isinstance(v, Unary):
                x, t = self.numeric(space, v.x)
                out = -x if v.op == "-" else np.exp(x)
                return _fp32(out), t
            if isinstance(v, Binary):
                a, ta = self.numeric(space, v.a)
                b, tb = self.numeric(space, v.b)
                out = {"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide,
                       "max": np.maximum, "min": np.minimum}[v.op](a, b)
                return _fp32(out), (merge_ids(ta, tb) if self.track else None)
            if isinstance(v, Select):
                cond = self.condition(space, v.cond)
                a, ta = self.numeric(space, v.a)
                b, tb = self.numeric(space, v.b)
                return np.where(cond, a, b), (merge_ids(ta, tb) if self.track else None)
        raise InterpError(f"value {v!r} has no numeric interpretation")

    def condition(self, space: ThreadSpace, cond) -> np.ndarray:
        val = evaluate(cond, space.env())
        return np.broadcast_to(np.asarray(val) != 0, (space.size,))

    def raw(self, space: ThreadSpace, v, dtype: str, nbytes: int):
        n = space.size
        if isinstance(v, Load):
            return self.read(space, v.access)
        if isinstance(v, (Const, IndexValue)):
            if isinstance(v, Const):
                val = np.full(n, float(v.value))
            else:
                val = np.broadcast_to(np.asarray(evaluate(v.expr, space.env()), dtype=np.float64), (n,))
            data = encode(val, dtype) if is_numeric(dtype) else np.zeros((n, nbytes), dtype=np.uint8)
            return data, self.bottom((n, nbytes))
        if isinstance(v, Concat):
            vals, tags = [], []
            for p in v.parts:
                raw, t = self.read(space, p.access)
                half = raw.shape[-1] // 2
                sl = slice(None) if p.half == "all" else (slice(0, half) if p.half == "lo" else slice(half, None))
                vals.append(raw[:, sl])
                tags.append(t[:, sl] if self.track else None)
            return np.concatenate(vals, axis=-1), (np.concatenate(tags, axis=-1) if self.track else None)
        if isinstance(v, Select):
            cond = self.condition(space, v.cond)[:, None]
            a, ta = self.raw(space, v.a, dtype, nbytes)
            b, tb = self.raw(space, v.b, dtype, nbytes)
            return np.where(cond, a, b), (merge_ids(ta, tb) if self.track else None)
        raise InterpError(f"value {v!r} cannot be copied byte-wise")

    def bottom(self, shape):
        return np.full(shape, BOTTOM_ID, dtype=ID_DTYPE) if self.track else None

    # --- statements --------------------------------------------------------

    def step(self, i: int, n, space: ThreadSpace, first_chunk: bool) -> None:
        ir = self.ir
        if isinstance(n, Store):
            decl = ir.decls[n.dst.decl]
            if n.numeric:
                vals, t = self.numeric(space, n.value)
                data = encode(vals, decl.dtype)
                tags = np.repeat(t[:, None], decl.element_bytes, axis=1) if self.track else None
            else:
                data, tags = self.raw(space, n.value, decl.dtype, decl.element_bytes)
            self.write(i, space, n.dst, data, tags)
            self.counters.instances += space.size
        elif isinstance(n, Matmul):
            self.matmul(i, n, space)
            self.counters.instances += space.size
        elif isinstance(n, Alloc):
            root = ir.root_of(n.decl)
            if root.space == "register":
                self.mem[root.name][space.gid] = 0
                if self.track:
                    self.tags.tags[root.name][space.gid] = BOTTOM_ID
            elif first_chunk:
                self.mem[root.name][:] = 0
                if self.track:
                    self.tags.tags[root.name][:] = BOTTOM_ID
        elif isinstance(n, TagBinding):
            if not self.track:
                return
            root = ir.root_of(n.decl)
            if root.space == "register":
                stamp_binding(self.tags, n, space, i)
            elif first_chunk and root.name not in self.input_tags:
                stamp_binding(self.tags, n, space, i)
        elif isinstance(n, Assertion):
            if self.track:
                for role, acc in (("left", n.left), ("right", n.right)):
                    _, t = self.read(space, acc, n.quantifiers, count=False)
                    self.capture(i, role, space, t, acc, n.quantifiers)
        elif isinstance(n, Barrier):
            if first_chunk:
                self.counters.barriers += ir.nblocks

    def capture(self, i: int, role: str, space: ThreadSpace, tags: np.ndarray, acc, quants=()) -> None:
        key = (i, role)
        if key not in self.log.sites:
            self.log.sites[key] = np.zeros((self.ir.total_threads,) + tags.shape[1:], dtype=ID_DTYPE)
            if isinstance(acc, tuple):
                addrs = np.stack([access_bytes(self.ir, self.full, a)[1] for a in acc], axis=1)
                root = self.ir.root_of(acc[0].decl).name
            else:
                addrs = access_bytes(self.ir, self.full, acc, quants)[1]
                root = self.ir.root_of(acc.decl).name
            self.log.site_addrs[key] = (root, addrs)
        self.log.sites[key][space.gid] = tags

    def matmul(self, i: int, n: Matmul, space: ThreadSpace) -> None:
        desc = n.descriptor
        lanes = desc.lanes
        if space.size % lanes or np.any(space.tid.reshape(-1, lanes) % lanes != np.arange(lanes)):
            raise InterpError("matmul executed by a partial warp")
        w = space.size // lanes

        def gather(region):
            parts = [self.read(space, acc) for acc in region]
            raw = np.stack([p[0] for p in parts], axis=1)
            tags = np.stack([p[1] for p in parts], axis=1) if self.track else None
            return decode(raw, self.ir.decls[region[0].decl].dtype), tags

        a, ta = gather(n.a)
        b, tb = gather(n.b)
        c, tc = gather(n.c)
        steps = a.shape[1] // desc.slots
        am, bm, cm = desc.a_map, desc.b_map, desc.c_map
        amat = np.zeros((w, steps, desc.m, desc.k))
        bmat = np.zeros((w, steps, desc.k, desc.n))
        amat[:, :, am[..., 0], am[..., 1]] = a.reshape(w, lanes, steps, desc.slots).transpose(0, 2, 1, 3)
        bmat[:, :, bm[..., 0], bm[..., 1]] = b.reshape(w, lanes, steps, desc.slots).transpose(0, 2, 1, 3)
        cmat = np.zeros((w, desc.m, desc.n))
        cmat[:, cm[..., 0], cm[..., 1]] = c.reshape(w, lanes, desc.accumulators)
        with np.errstate(all="ignore"):
            out = cmat + np.einsum("wqmk,wqkn->wmn", amat, bmat)
        res = out[:, cm[..., 0], cm[..., 1]].reshape(space.size, desc.accumulators)
        if self.track:
            self.capture(i, "a", space, ta, n.a)
            self.capture(i, "b", space, tb, n.b)
            self.capture(i, "c", space, tc, n.c)
        for k, acc in enumerate(n.dst):
            dtype = self.ir.decls[acc.decl].dtype
            self.write(i, space, acc, encode(res[:, k], dtype), tc[:, k] if self.track else None)

    # --- schedule ------------------------------------------------------------

    def chunks(self, start: int, stop: int) -> list[np.ndarray]:
        """Consecutive warp groups that can run in lockstep without changing the result."""
        ir, space = self.ir, self.full
        touched = []
        any_write = False
        for i in range(start, stop):
            n = ir.nodes[i]
            if isinstance(n, Assertion):
                continue
            ndst = 1 if isinstance(n, Store) else len(n.dst) if isinstance(n, Matmul) else 0
            for pos, (acc, q) in enumerate(node_accesses(n)):
                root = ir.root_of(acc.decl)
                if root.space == "register":
                    continue
                rows, addrs = access_bytes(ir, space, acc, q)
                keys = self.key_base[root.name] + rows * root.nbytes + addrs
                warps = np.broadcast_to(space.warp.reshape((-1,) + (1,) * (addrs.ndim - 1)), addrs.shape)
                is_w = pos < ndst
                any_write |= is_w
                touched.append((keys.reshape(-1), warps.reshape(-1), np.full(keys.size, is_w)))
        everyone = [space.gid]
        if not touched or not any_write:
            return everyone
        keys = np.concatenate([t[0] for t in touched])
        warps = np.concatenate([t[1] for t in touched])
        writes = np.concatenate([t[2] for t in touched])
        uniq, inv = np.unique(keys, return_inverse=True)
        lo = np.full(len(uniq), np.iinfo(np.int64).max)
        hi = np.full(len(uniq), -1)
        np.minimum.at(lo, inv, warps)
        np.maximum.at(hi, inv, warps)
        wr = np.zeros(len(uniq), dtype=bool)
        wr[inv[writes]] = True
        hot = (lo != hi) & wr
        if not hot.any():
            return everyone
        keep = hot[inv]
        keys, warps, writes = keys[keep], warps[keep], writes[keep]
        order = np.argsort(warps, kind="stable")
        keys, warps, writes = keys[order], warps[order], writes[order]
        bounds = np.searchsorted(warps, np.arange(space.warp.max() + 2))
        groups: list[list[int]] = []
        cur: list[int] = []
        seen_r: set = set()
        seen_w: set = set()
        for w in range(int(space.warp.max()) + 1):
            s, e = bounds[w], bounds[w + 1]
            k, wflag = keys[s:e], writes[s:e]
            r_set, w_set = set(k[~wflag].tolist()), set(k[wflag].tolist())
            if cur and (w_set & (seen_r | seen_w) or r_set & seen_w):
                groups.append(cur)
                cur, seen_r, seen_w = [], set(), set()
            cur.append(w)
            seen_r |= r_set
            seen_w |= w_set
        groups.append(cur)
        return [space.gid[np.isin(space.warp, g)] for g in groups]

    def run(self) -> RunResult:
        ir = self.ir
        if self.track:
            for name, ids in self.input_tags.items():
                root = ir.root_of(name)
                self.tags.tags[root.name][0, :] = np.asarray(ids, dtype=ID_DTYPE).reshape(-1)
            for b in self.decls_extra:
                stamp_binding(self.tags, b, self.full, -1)
        for start, stop in ir.phase_ranges():
            if self.track:
                for n in ir.nodes[start:stop]:
                    if isinstance(n, Reset):
                        self.tags.reset_shared(n.decl)
            for ci, gids in enumerate(self.chunks(start, stop)):
                space = self.full if len(gids) == self.full.size else ThreadSpace(ir, gids)
                for i in range(start, stop):
                    self.step(i, ir.nodes[i], space, ci == 0)
        outputs = {}
        for d in ir.roots("global"):
            outputs[d.name] = TensorValue(d.dtype, tuple(d.extents), self.mem[d.name][0].tobytes())
        return RunResult(outputs, self.counters, self.log)


def _fp32(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).astype(np.float32).astype(np.float64)


def run(ir: KernelIr, inputs: dict, *, check_safety: bool = True) -> RunResult:
    """Execute the kernel; every global tensor is returned (missing inputs start zeroed)."""
    if check_safety:
        validate_memory_safety(ir)
    return _Machine(ir, inputs, False, [], None, None, False).run()


def run_with_dynamic_tags(ir: KernelIr, inputs: dict, decls: list | None = None, *,
                          input_tags: dict | None = None, table: TagTable | None = None,
                          log_registers: bool = False, check_safety: bool = True) -> RunResult:
    """Execute the kernel and track tags along the executed schedule."""
    if check_safety:
        validate_memory_safety(ir)
    return _Machine(ir, inputs, True, decls or [], input_tags, table, log_registers).run()
