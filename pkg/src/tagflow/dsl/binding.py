"""Compile-time constant binding.

Binding substitutes every ``const`` parameter (and the launch constants
``threads``, ``grid_x``, ``grid_y``) into the kernel body and folds the
resulting integer arithmetic.  The result is still an ordinary ``Kernel`` so
it can be pretty-printed and re-parsed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from . import ast as A
from .expr import ExprError, apply_binop, apply_unary

#: Launch constants that may be bound without a matching parameter.
LAUNCH_CONSTS = ("threads", "grid_x", "grid_y")
LAUNCH_DEFAULTS = {"grid_x": 1, "grid_y": 1}

BUILTIN_FUNCS = frozenset({
    "syncthreads", "reset", "make_shared", "make_local", "matmul", "concat", "lo", "hi",
    "range", "exp", "max", "min", "float", "sched_barrier", "sched_group_barrier",
    "materialize", "buffer_load", "use_agpr",
})
BUILTIN_NAMES = frozenset({"threadIdx", "blockIdx"})
DTYPES = frozenset({
    "u8", "u16", "u32", "u64", "u128", "u256", "i32", "bf16", "fp8", "fp32",
})


class BindError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.message = message
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class BoundProgram:
    kernel: A.Kernel
    consts: Mapping[str, int] = field(default_factory=dict)

    @property
    def threads(self) -> int:
        return self.consts["threads"]

    @property
    def grid(self) -> tuple[int, int]:
        return self.consts.get("grid_x", 1), self.consts.get("grid_y", 1)

    @property
    def tensors(self) -> dict[str, A.Param]:
        return {p.name: p for p in self.kernel.params if p.kind == "tensor"}


def _fail(msg: str, node=None) -> BindError:
    pos = getattr(node, "pos", None) or A.Pos()
    return BindError(msg, pos.line, pos.col)


def substitute(e, env: Mapping[str, int]):
    """Replace bound names by literals and fold integer sub-expressions."""
    if e is None or isinstance(e, A.Num):
        return e
    if isinstance(e, A.Name):
        return A.Num(env[e.id], e.pos) if e.id in env else e
    if isinstance(e, A.Attr):
        return A.Attr(substitute(e.value, env), e.attr, e.pos)
    if isinstance(e, A.BinOp):
        left, right = substitute(e.left, env), substitute(e.right, env)
        if (isinstance(left, A.Num) and isinstance(right, A.Num)
                and isinstance(left.value, int) and isinstance(right.value, int)):
            try:
                return A.Num(apply_binop(e.op, left.value, right.value), e.pos)
            except ExprError as exc:
                raise _fail(str(exc), e) from None
        return A.BinOp(e.op, left, right, e.pos)
    if isinstance(e, A.UnaryOp):
        x = substitute(e.operand, env)
        if isinstance(x, A.Num) and isinstance(x.value, int):
            return A.Num(apply_unary(e.op, x.value), e.pos)
        return A.UnaryOp(e.op, x, e.pos)
    if isinstance(e, A.IfExp):
        test = substitute(e.test, env)
        body, orelse = substitute(e.body, env), substitute(e.orelse, env)
        if isinstance(test, A.Num):
            return body if test.value else orelse
        return A.IfExp(body, test, orelse, e.pos)
    if isinstance(e, A.Call):
        return A.Call(e.func, tuple(substitute(a, env) for a in e.args), e.pos)
    if isinstance(e, A.Subscript):
        return A.Subscript(substitute(e.value, env), tuple(substitute(a, env) for a in e.index), e.pos)
    if isinstance(e, A.TupleExpr):
        return A.TupleExpr(tuple(substitute(a, env) for a in e.elts), e.pos)
    if isinstance(e, A.Generator):
        inner = {k: v for k, v in env.items() if k != e.var}
        return A.Generator(substitute(e.elt, inner), e.var,
                           substitute(e.start, env), substitute(e.stop, env), e.pos)
    raise _fail(f"unexpected expression node {type(e).__name__}", e)


def _require_positive(e, what: str) -> int:
    if not isinstance(e, A.Num) or not isinstance(e.value, int):
        raise _fail(f"{what} does not fold to an integer constant", e)
    if e.value <= 0:
        raise _fail(f"non-positive extent {e.value} for {what}", e)
    return e.value


def _require_int(e, what: str) -> int:
    if not isinstance(e, A.Num) or not isinstance(e.value, int):
        raise _fail(f"{what} does not fold to an integer constant", e)
    return e.value


def _check_extents(e) -> None:
    """Shapes of tile declarations and views must be positive constants."""
    if isinstance(e, A.Call):
        fn = e.func
        shape_arg = None
        if isinstance(fn, A.Name) and fn.id in ("make_shared", "make_local") and e.args:
            shape_arg = e.args[0]
        elif isinstance(fn, A.Attr) and fn.attr == "view" and e.args:
            shape_arg = e.args[0]
        if shape_arg is not None:
            elts = shape_arg.elts if isinstance(shape_arg, A.TupleExpr) else (shape_arg,)
            name = fn.id if isinstance(fn, A.Name) else "view"
            for x in elts:
                _require_positive(x, f"{name} shape")
        for a in e.args:
            _check_extents(a)
    elif isinstance(e, A.Generator):
        lo = _require_int(e.start, "generator start")
        hi = _require_int(e.stop, "generator stop")
        if hi <= lo:
            raise _fail(f"non-positive extent {hi - lo} for generator range", e)
        _check_extents(e.elt)
    elif isinstance(e, (A.Subscript,)):
        _check_extents(e.value)
        for a in e.index:
            _check_extents(a)
    elif isinstance(e, A.TupleExpr):
        for a in e.elts:
            _check_extents(a)
    elif isinstance(e, A.IfExp):
        for a in (e.body, e.test, e.orelse):
            _check_extents(a)
    elif isinstance(e, A.BinOp):
        _check_extents(e.left)
        _check_extents(e.right)
    elif isinstance(e, A.UnaryOp):
        _check_extents(e.operand)


def _bind_stmt(s, env):
    if isinstance(s, A.Assign):
        out = A.Assign(tuple(substitute(t, env) for t in s.targets),
                       tuple(substitute(v, env) for v in s.values), s.pos)
        for v in out.values:
            _check_extents(v)
        return out
    if isinstance(s, A.ExprStmt):
        out = A.ExprStmt(substitute(s.value, env), s.pos)
        _check_extents(out.value)
        return out
    if isinstance(s, A.For):
        inner = {k: v for k, v in env.items() if k != s.var}
        lo = substitute(s.start, env)
        hi = substitute(s.stop, env)
        _require_int(lo, "loop start")
        _require_int(hi, "loop bound")
        body = tuple(_bind_stmt(b, inner) for b in s.body)
        return A.For(s.var, lo, hi, body, s.parallel, s.pos)
    if isinstance(s, A.TagStmt):
        defs = []
        for d in s.defs:
            inner = {k: v for k, v in env.items() if k not in d.vars}
            defs.append(A.TagDef(d.name, d.tensor, d.vars,
                                 tuple(substitute(x, inner) for x in d.exprs), d.pos))
        return A.TagStmt(tuple(defs), s.pos)
    if isinstance(s, A.AssertStmt):
        qvars = {q.var for q in s.quantifiers}
        inner = {k: v for k, v in env.items() if k not in qvars}
        quants = []
        for q in s.quantifiers:
            ext = substitute(q.extent, env)
            _require_positive(ext, f"quantifier '{q.var}'")
            quants.append(A.Quantifier(q.var, ext))
        return A.AssertStmt(s.op, substitute(s.left, inner), substitute(s.right, inner),
                            tuple(quants), s.pos)
    raise _fail(f"unexpected statement {type(s).__name__}", s)


# --- scope check -------------------------------------------------------------


def _check_names(e, scope: set[str]) -> None:
    if isinstance(e, A.Name):
        if e.id not in scope and e.id not in BUILTIN_FUNCS and e.id not in BUILTIN_NAMES \
                and e.id not in DTYPES:
            raise _fail(f"undeclared identifier '{e.id}'", e)
    elif isinstance(e, A.Attr):
        _check_names(e.value, scope)
    elif isinstance(e, A.BinOp):
        _check_names(e.left, scope)
        _check_names(e.right, scope)
    elif isinstance(e, A.UnaryOp):
        _check_names(e.operand, scope)
    elif isinstance(e, A.Call):
        _check_names(e.func, scope)
        for a in e.args:
            _check_names(a, scope)
    elif isinstance(e, A.Subscript):
        _check_names(e.value, scope)
        for a in e.index:
            _check_names(a, scope)
    elif isinstance(e, A.TupleExpr):
        for a in e.elts:
            _check_names(a, scope)
    elif isinstance(e, A.IfExp):
        for a in (e.body, e.test, e.orelse):
            _check_names(a, scope)
    elif isinstance(e, A.Generator):
        _check_names(e.start, scope)
        _check_names(e.stop, scope)
        _check_names(e.elt, scope | {e.var})


def check_scopes(kernel: A.Kernel, extra: set[str] = frozenset()) -> None:
    """Every identifier must be declared before use or be a builtin."""
    scope = {p.name for p in kernel.params} | set(extra) | set(LAUNCH_CONSTS)
    const_names = {p.name for p in kernel.params if p.kind == "const"} | set(LAUNCH_CONSTS)

    def visit(body, scope: set[str]) -> None:
        for s in body:
            if isinstance(s, A.Assign):
                for v in s.values:
                    _check_names(v, scope)
                for t in s.targets:
                    if isinstance(t, A.Name):
                        if t.id in const_names:
                            raise _fail(f"cannot assign to const '{t.id}'", t)
                        scope.add(t.id)
                    else:
                        _check_names(t, scope)
            elif isinstance(s, A.ExprStmt):
                _check_names(s.value, scope)
            elif isinstance(s, A.For):
                _check_names(s.start, scope)
                _check_names(s.stop, scope)
                inner = set(scope) | {s.var}
                visit(s.body, inner)
                scope.update(n for n in inner if n != s.var)
            elif isinstance(s, A.TagStmt):
                for d in s.defs:
                    if d.tensor not in scope:
                        raise _fail(f"tag declared on undeclared tile '{d.tensor}'", d)
                    for x in d.exprs:
                        _check_names(x, scope | set(d.vars))
                    scope.add(d.name)
            elif isinstance(s, A.AssertStmt):
                inner = scope | {q.var for q in s.quantifiers}
                for q in s.quantifiers:
                    _check_names(q.extent, scope)
                _check_names(s.left, inner)
                _check_names(s.right, inner)

    visit(kernel.body, set(scope))


# --- entry point -----------------------------------------------------------


def bind_constants(program, bindings: Mapping[str, int]) -> BoundProgram:
    """Bind ``const`` parameters and launch constants; fold all extents.

    Accepts a parsed ``Kernel`` or an already ``BoundProgram`` (in which case
    the same values are a no-op and conflicting values are an error).
    """
    if isinstance(program, BoundProgram):
        for k, v in bindings.items():
            if k in program.consts and program.consts[k] != v:
                raise BindError(f"const '{k}' already bound to {program.consts[k]}, got {v}")
            if k not in program.consts:
                raise BindError(f"unknown const '{k}'")
        return program
    kernel: A.Kernel = program
    params = {p.name: p for p in kernel.params}
    for k in bindings:
        if k not in LAUNCH_CONSTS and (k not in params or params[k].kind != "const"):
            raise BindError(f"unknown const '{k}'")
    check_scopes(kernel)

    env: dict[str, int] = {}
    # launch constants not declared as parameters are visible to parameter defaults
    for name in LAUNCH_CONSTS:
        if name not in params:
            if name in bindings:
                env[name] = int(bindings[name])
            elif name in LAUNCH_DEFAULTS:
                env[name] = LAUNCH_DEFAULTS[name]
    for p in kernel.params:
        if p.kind != "const":
            continue
        if p.name in bindings:
            env[p.name] = int(bindings[p.name])
        elif p.default is not None:
            env[p.name] = _require_int(substitute(p.default, env), f"default of '{p.name}'")
        else:
            raise BindError(f"missing binding for const '{p.name}'", p.pos.line, p.pos.col)
    for name in LAUNCH_CONSTS:
        if name in env:
            continue
        if name in bindings:
            env[name] = int(bindings[name])
        elif name in LAUNCH_DEFAULTS:
            env[name] = LAUNCH_DEFAULTS[name]
        else:
            raise BindError(f"missing binding for const '{name}'")
    for name in LAUNCH_CONSTS:
        if env[name] <= 0:
            raise BindError(f"non-positive extent {env[name]} for '{name}'")

    new_params = []
    for p in kernel.params:
        if p.kind == "tensor":
            shape = tuple(substitute(x, env) for x in p.shape)
            for x in shape:
                _require_positive(x, f"shape of tensor '{p.name}'")
            new_params.append(A.Param(p.name, "tensor", None, shape, p.dtype, p.pos))
        else:
            new_params.append(A.Param(p.name, "const", A.Num(env[p.name]), (), "", p.pos))
    body = tuple(_bind_stmt(s, env) for s in kernel.body)
    bound = A.Kernel(kernel.name, tuple(new_params), body, kernel.pos)
    return BoundProgram(bound, dict(sorted(env.items())))
