"""Assertion discharge against the static tag analysis."""

from __future__ import annotations

from .constraints import Constraint, DeclError, compile_assertions, compile_tag_decls
from .discharge import (
    DEFAULT_DOMAIN_CAP, DEFAULT_MAX_VIOLATIONS, AssertionResult, CheckReport, Operand, Violation, check, failing_mask,
)
from .schema import report_schema, validate_report

__all__ = [
    "AssertionResult",
    "CheckReport",
    "Constraint",
    "DEFAULT_DOMAIN_CAP",
    "DEFAULT_MAX_VIOLATIONS",
    "DeclError",
    "Operand",
    "Violation",
    "check",
    "compile_assertions",
    "compile_tag_decls",
    "failing_mask",
    "report_schema",
    "validate_report",
]
