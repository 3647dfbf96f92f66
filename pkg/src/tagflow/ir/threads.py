"""Vectorized evaluation of index expressions over all launched threads.

Threads are numbered globally as ``block * threads + tid`` with blocks in
``(by, bx)`` row-major order; every per-thread array in the package uses this
order on its first axis.  Warps are 64 consecutive threads of a block; the
global warp id is ``block * warps_per_block + tid // 64``.
"""

from __future__ import annotations

import numpy as np

from ..dsl.expr import evaluate
from .nodes import Access, KernelIr

WARP_SIZE = 64


def warps_per_block(threads: int) -> int:
    return -(-threads // WARP_SIZE)


class ThreadSpace:
    def __init__(self, ir: KernelIr, select: np.ndarray | None = None):
        self.ir = ir
        g = np.arange(ir.total_threads, dtype=np.int64) if select is None else np.asarray(select, dtype=np.int64)
        self.gid = g
        self.tid = g % ir.threads
        self.block = g // ir.threads
        self.bx = self.block % ir.grid[0]
        self.by = self.block // ir.grid[0]
        self.warp = self.block * warps_per_block(ir.threads) + self.tid // WARP_SIZE

    @property
    def size(self) -> int:
        return len(self.gid)

    def subset(self, select: np.ndarray) -> "ThreadSpace":
        return ThreadSpace(self.ir, self.gid[select] if select.dtype == bool else self.gid[select])

    def env(self, extra_dims: int = 0) -> dict:
        shape = (-1,) + (1,) * extra_dims
        return {"$tid": self.tid.reshape(shape), "$bx": self.bx.reshape(shape), "$by": self.by.reshape(shape)}

    def coords(self, access: Access, quantifiers: tuple = ()) -> list[np.ndarray]:
        """Coordinate arrays of shape (threads, *quantifier extents)."""
        k = len(quantifiers)
        env = self.env(k)
        for i, (var, n) in enumerate(quantifiers):
            shape = [1] * (k + 1)
            shape[i + 1] = n
            env[var] = np.arange(n, dtype=np.int64).reshape(shape)
        full = (self.size,) + tuple(n for _, n in quantifiers)
        return [np.broadcast_to(np.asarray(evaluate(x, env), dtype=np.int64), full) for x in access.index]

    def offsets(self, access: Access, quantifiers: tuple = ()) -> np.ndarray:
        """Byte offset of the element's first byte within its root storage."""
        decl = self.ir.decls[access.decl]
        coords = self.coords(access, quantifiers)
        return np.asarray(decl.layout.eval_unchecked(coords), dtype=np.int64) * decl.element_bytes


def byte_addresses(offsets: np.ndarray, nbytes: int) -> np.ndarray:
    """Expand element start offsets (...) to byte addresses (..., nbytes)."""
    return offsets[..., None] + np.arange(nbytes, dtype=np.int64)
