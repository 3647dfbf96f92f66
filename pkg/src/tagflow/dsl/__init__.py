"""Kernel DSL: lexer, parser, pretty-printer and constant binding."""

from __future__ import annotations

from .binding import BindError, BoundProgram, bind_constants
from .lexer import DslSyntaxError
from .parser import parse, parse_statements
from .printer import pretty

__all__ = [
    "BindError",
    "BoundProgram",
    "DslSyntaxError",
    "bind_constants",
    "parse",
    "parse_statements",
    "pretty",
]
