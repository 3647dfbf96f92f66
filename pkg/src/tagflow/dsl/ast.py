"""Syntax tree for the kernel DSL.

Nodes are frozen dataclasses; source positions are excluded from equality so
that a tree printed and re-parsed compares equal to the original.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Union


@dataclass(frozen=True)
class Pos:
    line: int = 0
    col: int = 0


def _pos() -> Pos:
    return field(default=Pos(), compare=False, repr=False)


# --- expressions -----------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: Union[int, float]
    pos: Pos = _pos()


@dataclass(frozen=True)
class Name:
    id: str
    pos: Pos = _pos()


@dataclass(frozen=True)
class Attr:
    value: "Expr"
    attr: str
    pos: Pos = _pos()


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    pos: Pos = _pos()


@dataclass(frozen=True)
class UnaryOp:
    op: str
    operand: "Expr"
    pos: Pos = _pos()


@dataclass(frozen=True)
class Call:
    func: "Expr"
    args: tuple
    pos: Pos = _pos()


@dataclass(frozen=True)
class Subscript:
    value: "Expr"
    index: tuple
    pos: Pos = _pos()


@dataclass(frozen=True)
class TupleExpr:
    elts: tuple
    pos: Pos = _pos()


@dataclass(frozen=True)
class IfExp:
    body: "Expr"
    test: "Expr"
    orelse: "Expr"
    pos: Pos = _pos()


@dataclass(frozen=True)
class Generator:
    """``elt for var in range(start, stop)`` inside a call argument list."""

    elt: "Expr"
    var: str
    start: "Expr"
    stop: "Expr"
    pos: Pos = _pos()


Expr = Union[Num, Name, Attr, BinOp, UnaryOp, Call, Subscript, TupleExpr, IfExp, Generator]


# --- statements ------------------------------------------------------------


@dataclass(frozen=True)
class Assign:
    targets: tuple
    values: tuple
    pos: Pos = _pos()


@dataclass(frozen=True)
class ExprStmt:
    value: Expr
    pos: Pos = _pos()


@dataclass(frozen=True)
class For:
    var: str
    start: Expr
    stop: Expr
    body: tuple
    parallel: bool = False
    pos: Pos = _pos()


@dataclass(frozen=True)
class TagDef:
    name: str
    tensor: str
    vars: tuple
    exprs: tuple
    pos: Pos = _pos()


@dataclass(frozen=True)
class TagStmt:
    defs: tuple
    pos: Pos = _pos()


@dataclass(frozen=True)
class Quantifier:
    var: str
    extent: Expr


@dataclass(frozen=True)
class AssertStmt:
    op: str  # "==" conformity, "!=" non-conformity
    left: Subscript
    right: Subscript
    quantifiers: tuple = ()
    pos: Pos = _pos()

    @property
    def kind(self) -> str:
        return "conformity" if self.op == "==" else "non-conformity"


Stmt = Union[Assign, ExprStmt, For, TagStmt, AssertStmt]


@dataclass(frozen=True)
class Param:
    name: str
    kind: str  # "const" | "tensor"
    default: Optional[Expr] = None
    shape: tuple = ()
    dtype: str = ""
    pos: Pos = _pos()


@dataclass(frozen=True)
class Kernel:
    name: str
    params: tuple
    body: tuple
    pos: Pos = _pos()

    def walk(self) -> Iterator[Stmt]:
        yield from walk_stmts(self.body)

    @property
    def tag_statements(self) -> list[TagStmt]:
        return [s for s in self.walk() if isinstance(s, TagStmt)]

    @property
    def assertions(self) -> list[AssertStmt]:
        return [s for s in self.walk() if isinstance(s, AssertStmt)]


def walk_stmts(body) -> Iterator[Stmt]:
    """Pre-order traversal; statement ids follow this order."""
    for s in body:
        yield s
        if isinstance(s, For):
            yield from walk_stmts(s.body)


def names_in(expr) -> set[str]:
    out: set[str] = set()

    def visit(e):
        if isinstance(e, Name):
            out.add(e.id)
        elif isinstance(e, Attr):
            visit(e.value)
        elif isinstance(e, BinOp):
            visit(e.left)
            visit(e.right)
        elif isinstance(e, UnaryOp):
            visit(e.operand)
        elif isinstance(e, Call):
            visit(e.func)
            for a in e.args:
                visit(a)
        elif isinstance(e, Subscript):
            visit(e.value)
            for a in e.index:
                visit(a)
        elif isinstance(e, TupleExpr):
            for a in e.elts:
                visit(a)
        elif isinstance(e, IfExp):
            visit(e.body)
            visit(e.test)
            visit(e.orelse)
        elif isinstance(e, Generator):
            inner = names_in(e.elt) - {e.var}
            out.update(inner)
            visit(e.start)
            visit(e.stop)

    visit(expr)
    return out
