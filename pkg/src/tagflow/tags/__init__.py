"""Tag lattice, abstract memory and static propagation."""

from __future__ import annotations

from .engine import SiteTags, TagTrace, propagate
from .lattice import BOTTOM, TOP, TagTable, leq, merge
from .state import TagError, TagState, apply_tag_decl

__all__ = [
    "BOTTOM",
    "TOP",
    "SiteTags",
    "TagError",
    "TagState",
    "TagTable",
    "TagTrace",
    "apply_tag_decl",
    "leq",
    "merge",
    "propagate",
]
