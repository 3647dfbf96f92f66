"""Integer expression evaluation and partial folding.

Expressions evaluate over Python ints or numpy int64 arrays (one lane per
thread); ``/`` is floor division and comparisons yield 0/1.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import ast as A

#: Internal names for the thread builtins after lowering.
BUILTIN_ATTRS = {
    ("threadIdx", "x"): "$tid",
    ("blockIdx", "x"): "$bx",
    ("blockIdx", "y"): "$by",
}
THREAD_VARS = frozenset(BUILTIN_ATTRS.values())


class ExprError(ValueError):
    pass


def _is_array(x) -> bool:
    return isinstance(x, np.ndarray)


def _check_divisor(b, op: str) -> None:
    if (_is_array(b) and np.any(b == 0)) or (not _is_array(b) and b == 0):
        raise ExprError(f"division by zero in '{op}'")


def apply_binop(op: str, a, b):
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        _check_divisor(b, op)
        return a // b
    if op == "%":
        _check_divisor(b, op)
        return a % b
    if op == "&":
        return a & b
    if op == "|":
        return a | b
    if op == "^":
        return a ^ b
    if op == "<<":
        return a << b
    if op == ">>":
        return a >> b
    if op in ("==", "!=", "<", "<=", ">", ">=", "and", "or"):
        if op == "and":
            r = np.logical_and(a, b) if _is_array(a) or _is_array(b) else (bool(a) and bool(b))
        elif op == "or":
            r = np.logical_or(a, b) if _is_array(a) or _is_array(b) else (bool(a) or bool(b))
        else:
            r = {
                "==": lambda: a == b,
                "!=": lambda: a != b,
                "<": lambda: a < b,
                "<=": lambda: a <= b,
                ">": lambda: a > b,
                ">=": lambda: a >= b,
            }[op]()
        return r.astype(np.int64) if _is_array(r) else int(r)
    raise ExprError(f"unsupported operator {op!r}")


def apply_unary(op: str, a):
    if op == "-":
        return -a
    if op == "~":
        return ~a
    if op == "not":
        return (a == 0).astype(np.int64) if _is_array(a) else int(a == 0)
    raise ExprError(f"unsupported unary operator {op!r}")


def builtin_name(e) -> str | None:
    if isinstance(e, A.Attr) and isinstance(e.value, A.Name):
        return BUILTIN_ATTRS.get((e.value.id, e.attr))
    return None


def evaluate(e, env: Mapping):
    """Evaluate an integer expression; every free name must be bound in ``env``."""
    if isinstance(e, A.Num):
        if isinstance(e.value, float):
            raise ExprError(f"float literal {e.value} in integer expression")
        return e.value
    if isinstance(e, A.Name):
        try:
            return env[e.id]
        except KeyError:
            raise ExprError(f"unbound name {e.id!r}") from None
    if isinstance(e, A.Attr):
        b = builtin_name(e)
        if b is None:
            raise ExprError(f"unsupported attribute {e.attr!r}")
        try:
            return env[b]
        except KeyError:
            raise ExprError(f"thread builtin {b} not available here") from None
    if isinstance(e, A.BinOp):
        return apply_binop(e.op, evaluate(e.left, env), evaluate(e.right, env))
    if isinstance(e, A.UnaryOp):
        return apply_unary(e.op, evaluate(e.operand, env))
    if isinstance(e, A.IfExp):
        t = evaluate(e.test, env)
        a, b = evaluate(e.body, env), evaluate(e.orelse, env)
        if _is_array(t):
            return np.where(t != 0, a, b)
        return a if t else b
    raise ExprError(f"not an integer expression: {type(e).__name__}")


def fold(e, env: Mapping):
    """Substitute names bound in ``env`` (ints or expressions) and fold constants."""
    if isinstance(e, A.Num):
        return e
    if isinstance(e, A.Name):
        if e.id in env:
            v = env[e.id]
            return A.Num(int(v)) if isinstance(v, (int, np.integer)) else v
        return e
    if isinstance(e, A.Attr):
        b = builtin_name(e)
        if b is None:
            raise ExprError(f"unsupported attribute {e.attr!r}")
        return fold(A.Name(b, e.pos), env)
    if isinstance(e, A.BinOp):
        left, right = fold(e.left, env), fold(e.right, env)
        if isinstance(left, A.Num) and isinstance(right, A.Num):
            return A.Num(apply_binop(e.op, left.value, right.value))
        return A.BinOp(e.op, left, right, e.pos)
    if isinstance(e, A.UnaryOp):
        x = fold(e.operand, env)
        if isinstance(x, A.Num):
            return A.Num(apply_unary(e.op, x.value))
        return A.UnaryOp(e.op, x, e.pos)
    if isinstance(e, A.IfExp):
        t = fold(e.test, env)
        body, orelse = fold(e.body, env), fold(e.orelse, env)
        if isinstance(t, A.Num):
            return body if t.value else orelse
        return A.IfExp(body, t, orelse, e.pos)
    raise ExprError(f"not an integer expression: {type(e).__name__}")


def free_names(e) -> set[str]:
    return {n for n in A.names_in(e)} | (
        {builtin_name(e)} if builtin_name(e) else set()
    )


def const_value(e) -> int | None:
    return e.value if isinstance(e, A.Num) and isinstance(e.value, int) else None
