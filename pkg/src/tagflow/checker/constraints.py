"""Assertion constraints and external tag declarations."""

from __future__ import annotations

from dataclasses import dataclass

from ..dsl import ast as A
from ..dsl.expr import ExprError, fold, free_names
from ..dsl.lexer import DslSyntaxError
from ..dsl.parser import parse_statements
from ..ir.nodes import Assertion, KernelIr, ProgramPoint, TagBinding


class DeclError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.message, self.line, self.col = message, line, col
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class Constraint:
    """One source assertion together with every unrolled instance of it."""

    assertion_id: str
    kind: str  # "conformity" or "non-conformity"
    stmt: int
    line: int
    nodes: tuple  # IR node indices, in program order
    extents: tuple  # quantifier extents per instance

    def domain_size(self, threads: int) -> int:
        size = threads * len(self.nodes)
        for n in self.extents:
            size *= n
        return size


def compile_assertions(ir: KernelIr) -> list[Constraint]:
    groups: dict[str, list[int]] = {}
    for i, n in enumerate(ir.nodes):
        if isinstance(n, Assertion):
            groups.setdefault(n.assertion_id, []).append(i)
    out = []
    for aid in ir.assertion_ids:
        idx = groups.get(aid, [])
        if not idx:
            continue  # assertion inside a loop with zero trips
        first: Assertion = ir.nodes[idx[0]]
        out.append(Constraint(aid, first.assertion_kind, first.point.stmt, first.point.line, tuple(idx),
                              first.extents))
    return out


def compile_tag_decls(ir: KernelIr, source: str) -> list[TagBinding]:
    """Tag statements from a separate file, applied to global tensors before the kernel runs.

    The expressions may use the bound coordinate variables and the kernel's
    constants.
    """
    try:
        stmts = parse_statements(source)
    except DslSyntaxError as exc:
        raise DeclError(exc.message, exc.line, exc.col) from None
    out = []
    for s in stmts:
        if not isinstance(s, A.TagStmt):
            raise DeclError("a tag declaration file holds only 'tag' statements", s.pos.line, s.pos.col)
        for d in s.defs:
            decl = ir.decls.get(d.tensor)
            if decl is None or decl.space != "global" or decl.is_view:
                raise DeclError(f"'{d.tensor}' is not a global tensor of kernel '{ir.name}'",
                                d.pos.line, d.pos.col)
            if len(d.vars) != decl.layout.rank:
                raise DeclError(f"tag function on '{d.tensor}' binds {len(d.vars)} coordinates, tensor has "
                                f"rank {decl.layout.rank}", d.pos.line, d.pos.col)
            env = {k: v for k, v in ir.consts.items() if k not in d.vars}
            exprs = []
            for x in d.exprs:
                try:
                    folded = fold(x, env)
                except ExprError as exc:
                    raise DeclError(str(exc), d.pos.line, d.pos.col) from None
                unknown = free_names(folded) - set(d.vars)
                if unknown:
                    raise DeclError(f"unknown name '{sorted(unknown)[0]}' in tag function '{d.name}'",
                                    d.pos.line, d.pos.col)
                exprs.append(folded)
            out.append(TagBinding(point=ProgramPoint(-1, (), d.pos.line), phase=0, name=d.name,
                                  decl=decl.name, vars=tuple(d.vars), exprs=tuple(exprs)))
    return out
