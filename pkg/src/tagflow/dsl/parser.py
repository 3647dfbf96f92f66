"""Recursive-descent parser for the kernel DSL (grammar in docs/grammar.md)."""

from __future__ import annotations

from . import ast as A
from .lexer import KEYWORDS, DslSyntaxError, Token, tokenize

_COMPARE = ("==", "!=", "<", "<=", ">", ">=")
_BINARY_LEVELS = [("|",), ("^",), ("&",), ("<<", ">>"), ("+", "-"), ("*", "/", "%")]


class Parser:
    def __init__(self, source: str):
        self.tokens = tokenize(source)
        self.i = 0

    # --- token helpers -----------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def at(self, value: str, kind: str | None = None) -> bool:
        t = self.tok
        if kind is not None and t.kind != kind:
            return False
        return t.value == value and t.kind in ("OP", "NAME")

    def at_kind(self, kind: str) -> bool:
        return self.tok.kind == kind

    def advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def fail(self, expected) -> DslSyntaxError:
        t = self.tok
        return DslSyntaxError(f"unexpected {t.describe()}", t.line, t.col, frozenset(expected))

    def expect(self, value: str) -> Token:
        if self.tok.kind in ("OP", "NAME") and self.tok.value == value:
            return self.advance()
        raise self.fail({repr(value)})

    def expect_kind(self, kind: str) -> Token:
        if self.tok.kind == kind:
            return self.advance()
        raise self.fail({kind})

    def expect_name(self) -> Token:
        t = self.tok
        if t.kind == "NAME" and t.value not in KEYWORDS:
            return self.advance()
        raise self.fail({"NAME"})

    def pos(self, t: Token | None = None) -> A.Pos:
        t = t or self.tok
        return A.Pos(t.line, t.col)

    # --- top level ---------------------------------------------------------

    def parse_kernel(self) -> A.Kernel:
        while self.at_kind("NEWLINE"):
            self.advance()
        start = self.expect("def")
        name = self.expect_name().value
        self.expect("(")
        params = []
        while not self.at(")"):
            params.append(self.parse_param())
            if not self.at(")"):
                self.expect(",")
        self.expect(")")
        self.expect(":")
        body = self.parse_suite(allow_empty=True)
        while self.at_kind("NEWLINE"):
            self.advance()
        self.expect_kind("EOF")
        return A.Kernel(name, tuple(params), body, self.pos(start))

    def parse_param(self) -> A.Param:
        nt = self.expect_name()
        self.expect(":")
        kind = self.tok
        if self.at("const"):
            self.advance()
            default = None
            if self.at("="):
                self.advance()
                default = self.parse_expr()
            return A.Param(nt.value, "const", default, pos=self.pos(nt))
        if self.at("Tensor"):
            self.advance()
            self.expect("(")
            shape = self.parse_expr()
            if not isinstance(shape, A.TupleExpr):
                shape = A.TupleExpr((shape,), shape.pos)
            self.expect(",")
            dtype = self.expect_name().value
            self.expect(")")
            return A.Param(nt.value, "tensor", None, shape.elts, dtype, pos=self.pos(nt))
        raise DslSyntaxError(f"unexpected {kind.describe()}", kind.line, kind.col, frozenset({"'const'", "'Tensor'"}))

    def parse_suite(self, allow_empty: bool = False) -> tuple:
        if not self.at_kind("NEWLINE"):
            stmts = self.parse_simple_line()
            return tuple(s for s in stmts if s is not None)
        self.advance()
        if not self.at_kind("INDENT"):
            if allow_empty and self.at_kind("EOF"):
                return ()
            raise self.fail({"INDENT"})
        self.advance()
        body = []
        while not self.at_kind("DEDENT"):
            if self.at_kind("EOF"):
                raise self.fail({"DEDENT"})
            body.extend(s for s in self.parse_statement() if s is not None)
        self.advance()
        return tuple(body)

    def parse_statement(self) -> list:
        if self.at("for") or self.at("forall"):
            return [self.parse_for()]
        return self.parse_simple_line()

    def parse_simple_line(self) -> list:
        stmt = self.parse_simple()
        self.expect_kind("NEWLINE")
        return [stmt]

    def parse_for(self) -> A.For:
        start = self.advance()
        parallel = start.value == "forall"
        var = self.expect_name().value
        self.expect("in")
        lo, hi = self.parse_range()
        self.expect(":")
        body = self.parse_suite()
        return A.For(var, lo, hi, body, parallel, self.pos(start))

    def parse_range(self) -> tuple:
        self.expect("range")
        self.expect("(")
        first = self.parse_expr()
        if self.at(","):
            self.advance()
            second = self.parse_expr()
            lo, hi = first, second
        else:
            lo, hi = A.Num(0), first
        self.expect(")")
        return lo, hi

    def parse_simple(self):
        t = self.tok
        if self.at("pass"):
            self.advance()
            return None
        if self.at("tag") and self.peek().kind == "NAME":
            return self.parse_tag_stmt()
        if self.at("assert"):
            return self.parse_assert()
        lhs = self.parse_exprlist()
        if self.at("="):
            self.advance()
            rhs = self.parse_exprlist()
            for target in lhs:
                if not isinstance(target, (A.Name, A.Subscript)):
                    raise DslSyntaxError("cannot assign to expression", target.pos.line, target.pos.col,
                                         frozenset({"NAME", "subscript"}))
            if len(lhs) != len(rhs):
                raise DslSyntaxError(
                    f"{len(lhs)} targets but {len(rhs)} values", t.line, t.col, frozenset()
                )
            return A.Assign(tuple(lhs), tuple(rhs), self.pos(t))
        if len(lhs) != 1 or not isinstance(lhs[0], A.Call):
            raise self.fail({"'='"})
        return A.ExprStmt(lhs[0], self.pos(t))

    def parse_tag_stmt(self) -> A.TagStmt:
        start = self.advance()
        names = [self.expect_name()]
        while self.at(","):
            self.advance()
            names.append(self.expect_name())
        self.expect("=")
        defs = []
        for i, n in enumerate(names):
            if i:
                self.expect(",")
            tensor = self.expect_name()
            self.expect("[")
            vars_ = [self.expect_name().value]
            while self.at(","):
                self.advance()
                vars_.append(self.expect_name().value)
            self.expect("]")
            self.expect("->")
            self.expect("(")
            exprs = [self.parse_expr()]
            while self.at(","):
                self.advance()
                if self.at(")"):
                    break
                exprs.append(self.parse_expr())
            self.expect(")")
            defs.append(A.TagDef(n.value, tensor.value, tuple(vars_), tuple(exprs), self.pos(n)))
        return A.TagStmt(tuple(defs), self.pos(start))

    def parse_tagref(self) -> A.Subscript:
        self.expect("tag")
        if self.at("("):
            close = ")"
        elif self.at("["):
            close = "]"
        else:
            raise self.fail({"'('", "'['"})
        self.advance()
        ref = self.parse_expr()
        if not isinstance(ref, A.Subscript):
            raise DslSyntaxError("tag() takes a subscripted tile", ref.pos.line, ref.pos.col, frozenset({"subscript"}))
        self.expect(close)
        return ref

    def parse_assert(self) -> A.AssertStmt:
        start = self.advance()
        left = self.parse_tagref()
        if not (self.at("==") or self.at("!=")):
            raise self.fail({"'=='", "'!='"})
        op = self.advance().value
        right = self.parse_tagref()
        quants = []
        while self.at("for"):
            self.advance()
            var = self.expect_name().value
            self.expect("in")
            lo, hi = self.parse_range()
            if not (isinstance(lo, A.Num) and lo.value == 0):
                raise DslSyntaxError("quantifier ranges start at 0", start.line, start.col, frozenset())
            quants.append(A.Quantifier(var, hi))
        return A.AssertStmt(op, left, right, tuple(quants), self.pos(start))

    # --- expressions -------------------------------------------------------

    def parse_exprlist(self) -> list:
        items = [self.parse_expr()]
        while self.at(","):
            self.advance()
            items.append(self.parse_expr())
        return items

    def parse_expr(self):
        t = self.tok
        body = self.parse_or()
        if self.at("if"):
            self.advance()
            test = self.parse_or()
            self.expect("else")
            orelse = self.parse_expr()
            return A.IfExp(body, test, orelse, self.pos(t))
        return body

    def parse_or(self):
        left = self.parse_and()
        while self.at("or"):
            t = self.advance()
            left = A.BinOp("or", left, self.parse_and(), self.pos(t))
        return left

    def parse_and(self):
        left = self.parse_not()
        while self.at("and"):
            t = self.advance()
            left = A.BinOp("and", left, self.parse_not(), self.pos(t))
        return left

    def parse_not(self):
        if self.at("not"):
            t = self.advance()
            return A.UnaryOp("not", self.parse_not(), self.pos(t))
        return self.parse_compare()

    def parse_compare(self):
        left = self.parse_binary(0)
        if self.tok.kind == "OP" and self.tok.value in _COMPARE:
            t = self.advance()
            left = A.BinOp(t.value, left, self.parse_binary(0), self.pos(t))
        return left

    def parse_binary(self, level: int):
        if level == len(_BINARY_LEVELS):
            return self.parse_unary()
        ops = _BINARY_LEVELS[level]
        left = self.parse_binary(level + 1)
        while self.tok.kind == "OP" and self.tok.value in ops:
            t = self.advance()
            left = A.BinOp(t.value, left, self.parse_binary(level + 1), self.pos(t))
        return left

    def parse_unary(self):
        if self.tok.kind == "OP" and self.tok.value in ("-", "~"):
            t = self.advance()
            return A.UnaryOp(t.value, self.parse_unary(), self.pos(t))
        return self.parse_postfix()

    def parse_postfix(self):
        node = self.parse_atom()
        while True:
            if self.at("("):
                t = self.advance()
                node = A.Call(node, self.parse_call_args(), self.pos(t))
            elif self.at("["):
                t = self.advance()
                idx = [self.parse_expr()]
                while self.at(","):
                    self.advance()
                    idx.append(self.parse_expr())
                self.expect("]")
                node = A.Subscript(node, tuple(idx), self.pos(t))
            elif self.at("."):
                t = self.advance()
                node = A.Attr(node, self.expect_name().value, self.pos(t))
            else:
                return node

    def parse_call_args(self) -> tuple:
        args = []
        if self.at(")"):
            self.advance()
            return ()
        first = self.parse_expr()
        if self.at("for"):
            t = self.advance()
            var = self.expect_name().value
            self.expect("in")
            lo, hi = self.parse_range()
            self.expect(")")
            return (A.Generator(first, var, lo, hi, self.pos(t)),)
        args.append(first)
        while self.at(","):
            self.advance()
            if self.at(")"):
                break
            args.append(self.parse_expr())
        self.expect(")")
        return tuple(args)

    def parse_atom(self):
        t = self.tok
        if t.kind == "NUMBER":
            self.advance()
            text = t.value
            if any(ch in text for ch in ".eE"):
                return A.Num(float(text), self.pos(t))
            return A.Num(int(text), self.pos(t))
        if t.kind == "NAME" and t.value not in KEYWORDS:
            self.advance()
            return A.Name(t.value, self.pos(t))
        if self.at("("):
            self.advance()
            if self.at(")"):
                self.advance()
                return A.TupleExpr((), self.pos(t))
            first = self.parse_expr()
            if self.at(")"):
                self.advance()
                return first
            elts = [first]
            while self.at(","):
                self.advance()
                if self.at(")"):
                    break
                elts.append(self.parse_expr())
            self.expect(")")
            return A.TupleExpr(tuple(elts), self.pos(t))
        raise self.fail({"NAME", "NUMBER", "'('"})


def parse(source: str) -> A.Kernel:
    """Parse one kernel definition.  Raises DslSyntaxError on the first error."""
    return Parser(source).parse_kernel()


def parse_statements(source: str) -> tuple:
    """Parse a bare statement sequence (used for tag-decl files and KB templates)."""
    body = "".join("  " + line + "\n" for line in source.splitlines())
    try:
        return parse("def _fragment():\n" + body).body
    except DslSyntaxError as exc:
        raise DslSyntaxError(exc.message, max(exc.line - 1, 1), max(exc.col - 2, 1), exc.expected) from None
