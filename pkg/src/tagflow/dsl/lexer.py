from __future__ import annotations

import re
from dataclasses import dataclass


class DslSyntaxError(Exception):
    """Lexical or syntax error with 1-based line/column and the expected tokens."""

    def __init__(self, message: str, line: int, col: int, expected: frozenset[str] = frozenset()):
        self.message = message
        self.line = line
        self.col = col
        self.expected = frozenset(expected)
        detail = f" (expected one of: {', '.join(sorted(self.expected))})" if self.expected else ""
        super().__init__(f"{line}:{col}: {message}{detail}")


@dataclass(frozen=True)
class Token:
    kind: str  # NAME NUMBER OP NEWLINE INDENT DEDENT EOF
    value: str
    line: int
    col: int

    def describe(self) -> str:
        if self.kind in ("NAME", "NUMBER", "OP"):
            return repr(self.value)
        return self.kind


KEYWORDS = {"def", "for", "forall", "in", "if", "else", "pass", "assert", "and", "or", "not"}

_OPS = sorted(
    ["->", "==", "!=", "<=", ">=", "<<", ">>", "+", "-", "*", "/", "%", "&", "|", "^", "~",
     "<", ">", "=", "(", ")", "[", "]", ",", ":", "."],
    key=len,
    reverse=True,
)
_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t]+)"
    r"|(?P<comment>\#[^\n]*)"
    r"|(?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>" + "|".join(re.escape(o) for o in _OPS) + r"|→)"
)
_CLOSE = {")": "(", "]": "["}


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    indents = [0]
    depth: list[tuple[str, int, int]] = []
    lines = source.splitlines()
    for lineno, raw in enumerate(lines, start=1):
        pos = 0
        if not depth:
            stripped = raw.lstrip(" \t")
            if not stripped or stripped.startswith("#"):
                continue
            indent = len(raw[: len(raw) - len(stripped)].expandtabs(8))
            if indent > indents[-1]:
                indents.append(indent)
                tokens.append(Token("INDENT", "", lineno, 1))
            else:
                while indent < indents[-1]:
                    indents.pop()
                    tokens.append(Token("DEDENT", "", lineno, 1))
                if indent != indents[-1]:
                    raise DslSyntaxError("inconsistent dedent", lineno, indent + 1)
        while pos < len(raw):
            m = _TOKEN_RE.match(raw, pos)
            if m is None:
                raise DslSyntaxError(f"unexpected character {raw[pos]!r}", lineno, pos + 1)
            col = pos + 1
            pos = m.end()
            kind = m.lastgroup
            text = m.group()
            if kind in ("ws", "comment"):
                continue
            if kind == "number":
                tokens.append(Token("NUMBER", text, lineno, col))
            elif kind == "name":
                tokens.append(Token("NAME", text, lineno, col))
            else:
                if text == "→":
                    text = "->"
                if text in "([":
                    depth.append((text, lineno, col))
                elif text in ")]":
                    if not depth or depth[-1][0] != _CLOSE[text]:
                        raise DslSyntaxError(f"unmatched {text!r}", lineno, col)
                    depth.pop()
                tokens.append(Token("OP", text, lineno, col))
        if not depth and tokens and tokens[-1].kind not in ("NEWLINE", "INDENT", "DEDENT"):
            tokens.append(Token("NEWLINE", "", lineno, len(raw) + 1))
    last = len(lines) + 1
    if depth:
        opener, line, col = depth[-1]
        closer = ")" if opener == "(" else "]"
        raise DslSyntaxError(f"unclosed {opener!r}", line, col, frozenset({repr(closer)}))
    while len(indents) > 1:
        indents.pop()
        tokens.append(Token("DEDENT", "", last, 1))
    tokens.append(Token("EOF", "", last, 1))
    return tokens
