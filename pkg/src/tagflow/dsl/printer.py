"""Canonical pretty-printer; ``parse(pretty(k)) == k`` for every kernel."""

from __future__ import annotations

from . import ast as A

_PREC = {
    "or": 1, "and": 2,
    "==": 4, "!=": 4, "<": 4, "<=": 4, ">": 4, ">=": 4,
    "|": 5, "^": 6, "&": 7, "<<": 8, ">>": 8, "+": 9, "-": 9, "*": 10, "/": 10, "%": 10,
}
_UNARY_PREC = {"not": 3, "-": 11, "~": 11}


def expr_str(e, parent: int = 0) -> str:
    if isinstance(e, A.Num):
        return repr(e.value)
    if isinstance(e, A.Name):
        return e.id
    if isinstance(e, A.Attr):
        return f"{expr_str(e.value, 12)}.{e.attr}"
    if isinstance(e, A.BinOp):
        p = _PREC[e.op]
        # left-associative: the right operand needs parens at equal precedence
        rhs_parent = p + 1 if p != 4 else 5
        lhs_parent = p if p != 4 else 5
        s = f"{expr_str(e.left, lhs_parent)} {e.op} {expr_str(e.right, rhs_parent)}"
        return f"({s})" if p < parent else s
    if isinstance(e, A.UnaryOp):
        p = _UNARY_PREC[e.op]
        sep = " " if e.op == "not" else ""
        s = f"{e.op}{sep}{expr_str(e.operand, p)}"
        return f"({s})" if p < parent else s
    if isinstance(e, A.Call):
        return f"{expr_str(e.func, 12)}({', '.join(expr_str(a) for a in e.args)})"
    if isinstance(e, A.Subscript):
        return f"{expr_str(e.value, 12)}[{', '.join(expr_str(a) for a in e.index)}]"
    if isinstance(e, A.TupleExpr):
        if len(e.elts) == 1:
            return f"({expr_str(e.elts[0])},)"
        return "(" + ", ".join(expr_str(a) for a in e.elts) + ")"
    if isinstance(e, A.IfExp):
        s = f"{expr_str(e.body, 1)} if {expr_str(e.test, 1)} else {expr_str(e.orelse)}"
        return f"({s})" if parent > 0 else s
    if isinstance(e, A.Generator):
        return f"{expr_str(e.elt)} for {e.var} in {_range_str(e.start, e.stop)}"
    raise TypeError(f"not an expression: {e!r}")


def _range_str(lo, hi) -> str:
    if isinstance(lo, A.Num) and lo.value == 0:
        return f"range({expr_str(hi)})"
    return f"range({expr_str(lo)}, {expr_str(hi)})"


def _stmt_lines(s, indent: str) -> list[str]:
    if isinstance(s, A.Assign):
        lhs = ", ".join(expr_str(t) for t in s.targets)
        rhs = ", ".join(expr_str(v) for v in s.values)
        return [f"{indent}{lhs} = {rhs}"]
    if isinstance(s, A.ExprStmt):
        return [f"{indent}{expr_str(s.value)}"]
    if isinstance(s, A.For):
        kw = "forall" if s.parallel else "for"
        head = f"{indent}{kw} {s.var} in {_range_str(s.start, s.stop)}:"
        body = _body_lines(s.body, indent + "    ")
        return [head] + body
    if isinstance(s, A.TagStmt):
        names = ", ".join(d.name for d in s.defs)
        defs = ", ".join(
            f"{d.tensor}[{', '.join(d.vars)}] -> ({', '.join(expr_str(x) for x in d.exprs)}"
            + ("," if len(d.exprs) == 1 else "")
            + ")"
            for d in s.defs
        )
        return [f"{indent}tag {names} = {defs}"]
    if isinstance(s, A.AssertStmt):
        q = "".join(f" for {x.var} in range({expr_str(x.extent)})" for x in s.quantifiers)
        return [f"{indent}assert tag({expr_str(s.left)}) {s.op} tag({expr_str(s.right)}){q}"]
    raise TypeError(f"not a statement: {s!r}")


def _body_lines(body, indent: str) -> list[str]:
    if not body:
        return [f"{indent}pass"]
    out = []
    for s in body:
        out.extend(_stmt_lines(s, indent))
    return out


def _param_str(p: A.Param) -> str:
    if p.kind == "const":
        return f"{p.name}: const" + (f" = {expr_str(p.default)}" if p.default is not None else "")
    shape = expr_str(A.TupleExpr(p.shape))
    return f"{p.name}: Tensor({shape}, {p.dtype})"


def pretty(kernel: A.Kernel) -> str:
    params = ",\n        ".join(_param_str(p) for p in kernel.params)
    lines = [f"def {kernel.name}({params}):"]
    lines.extend(_body_lines(kernel.body, "    "))
    return "\n".join(lines) + "\n"
