"""Unrolled per-statement IR.

Every node is one executed statement instance.  Index expressions are DSL
expression trees whose only free names are the thread builtins (``$tid``,
``$bx``, ``$by``) plus, inside assertions and tag declarations, the
quantified element variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

from ..dsl import ast as A
from ..dtypes import element_bytes
from ..layout import Layout
from .intrinsics import IntrinsicDescriptor

SPACES = ("global", "shared", "register")


@dataclass(frozen=True)
class ProgramPoint:
    stmt: int
    instance: tuple
    line: int

    def to_json(self) -> dict:
        return {"stmt": self.stmt, "instance": list(self.instance), "line": self.line}


@dataclass(frozen=True, eq=False)
class MemDecl:
    name: str
    space: str
    dtype: str
    layout: Layout
    root: str  # storage owner; equals ``name`` unless this is a view
    writable: bool = True
    line: int = 0
    source: str | None = None  # the declaration this view was taken of

    @property
    def is_view(self) -> bool:
        return self.root != self.name

    @property
    def element_bytes(self) -> int:
        return element_bytes(self.dtype)

    @property
    def nbytes(self) -> int:
        return self.layout.size() * self.element_bytes

    @property
    def extents(self) -> tuple:
        return self.layout.extents


@dataclass(frozen=True)
class Access:
    """One element of a declaration, addressed by a full index."""

    decl: str
    index: tuple  # of A.Expr, one per layout dimension


# --- data values ------------------------------------------------------------


@dataclass(frozen=True)
class Load:
    access: Access


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class IndexValue:
    """An integer expression over thread builtins used as data (tag bottom)."""

    expr: A.Expr


@dataclass(frozen=True)
class Unary:
    op: str  # "-", "exp"
    x: "Value"


@dataclass(frozen=True)
class Binary:
    op: str  # "+", "-", "*", "/", "max", "min"
    a: "Value"
    b: "Value"


@dataclass(frozen=True)
class Select:
    cond: A.Expr
    a: "Value"
    b: "Value"


@dataclass(frozen=True)
class Part:
    access: Access
    half: str  # "lo" | "hi" | "all"


@dataclass(frozen=True)
class Concat:
    parts: tuple  # of Part, low bytes first


Value = Union[Load, Const, IndexValue, Unary, Binary, Select, Concat]


# --- statement instances ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Node:
    point: ProgramPoint
    phase: int

    kind = "node"


@dataclass(frozen=True, eq=False)
class Alloc(Node):
    decl: str = ""
    kind = "alloc"


@dataclass(frozen=True, eq=False)
class ViewAlias(Node):
    decl: str = ""
    source: str = ""
    kind = "view"


@dataclass(frozen=True, eq=False)
class Store(Node):
    dst: Access = None  # type: ignore[assignment]
    value: Value = None  # type: ignore[assignment]
    numeric: bool = False  # False: byte-wise copy, True: decode/compute/encode
    kind = "store"


@dataclass(frozen=True, eq=False)
class Matmul(Node):
    dst: tuple = ()  # of Access, one per accumulator
    a: tuple = ()
    b: tuple = ()
    c: tuple = ()
    descriptor: IntrinsicDescriptor = None  # type: ignore[assignment]
    kind = "matmul"


@dataclass(frozen=True, eq=False)
class Barrier(Node):
    kind = "barrier"


@dataclass(frozen=True, eq=False)
class Reset(Node):
    decl: str = ""
    kind = "reset"


@dataclass(frozen=True, eq=False)
class TagBinding(Node):
    """A tag function attached to a declaration: coordinates -> integer tuple."""

    name: str = ""
    decl: str = ""
    vars: tuple = ()
    exprs: tuple = ()
    kind = "tagdecl"


@dataclass(frozen=True, eq=False)
class Assertion(Node):
    assertion_id: str = ""
    op: str = "=="
    left: Access = None  # type: ignore[assignment]
    right: Access = None  # type: ignore[assignment]
    quantifiers: tuple = ()  # of (var, extent)
    kind = "assert"

    @property
    def assertion_kind(self) -> str:
        return "conformity" if self.op == "==" else "non-conformity"

    @property
    def extents(self) -> tuple:
        return tuple(n for _, n in self.quantifiers)


@dataclass(frozen=True, eq=False)
class Annotation(Node):
    name: str = ""
    args: tuple = ()
    kind = "annotation"


@dataclass(eq=False)
class KernelIr:
    name: str
    consts: dict
    threads: int
    grid: tuple
    decls: dict  # name -> MemDecl, in declaration order
    nodes: list
    tag_bindings: list = field(default_factory=list)
    assertion_ids: list = field(default_factory=list)

    @property
    def nblocks(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def total_threads(self) -> int:
        return self.threads * self.nblocks

    @property
    def num_phases(self) -> int:
        return (self.nodes[-1].phase + 1) if self.nodes else 1

    def roots(self, space: str | None = None) -> list[MemDecl]:
        return [d for d in self.decls.values() if not d.is_view and (space is None or d.space == space)]

    def root_of(self, name: str) -> MemDecl:
        return self.decls[self.decls[name].root]

    def points(self) -> list[ProgramPoint]:
        return [n.point for n in self.nodes]

    def assertions(self) -> list[Assertion]:
        return [n for n in self.nodes if isinstance(n, Assertion)]

    def phase_ranges(self) -> list[tuple[int, int]]:
        """Node index ranges [start, stop) per phase; the barrier closes its phase."""
        out = []
        start = 0
        for i, n in enumerate(self.nodes):
            if isinstance(n, Barrier):
                out.append((start, i + 1))
                start = i + 1
        out.append((start, len(self.nodes)))
        return out
