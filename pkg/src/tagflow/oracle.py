"""Cross-checks between the static analysis and the interpreter's tag log."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checker.discharge import Violation, failing_mask
from .interp.machine import DynamicTagLog
from .tags.engine import TagTrace
from .tags.lattice import BOTTOM_ID, TOP_ID, fold_ids, leq_ids


@dataclass(frozen=True)
class Agreement:
    sites: int
    bytes_checked: int
    unsound: int  # bytes where the static tag is not above the dynamic one
    tuple_mismatches: int  # static tuple differs from the dynamic tag
    bottom_mismatches: int  # static bottom but dynamic not bottom

    @property
    def ok(self) -> bool:
        return not (self.unsound or self.tuple_mismatches or self.bottom_mismatches)


def compare(trace: TagTrace, log: DynamicTagLog) -> Agreement:
    """Byte-wise comparison at every site captured by both analyses.

    Both sides must share one ``TagTable`` (pass the static trace's table to
    the interpreter) so that equal ids mean equal tuples.
    """
    if trace.table is not log.table:
        raise ValueError("static trace and dynamic log must share a tag table")
    n = unsound = tuples = bottoms = 0
    keys = sorted(set(trace.sites) & set(log.sites))
    for key in keys:
        s = trace.sites[key].byte_tags
        d = log.sites[key]
        n += s.size
        unsound += int((~leq_ids(d, s)).sum())
        tuples += int(((s > TOP_ID) & (s != d)).sum())
        bottoms += int(((s == BOTTOM_ID) & (d != BOTTOM_ID)).sum())
    return Agreement(len(keys), n, unsound, tuples, bottoms)


def dynamic_failures(log: DynamicTagLog, node: int, kind: str) -> np.ndarray:
    """Failing mask (threads, *elements) of one assertion instance under the logged tags."""
    left = fold_ids(log.site(node, "left"))
    right = fold_ids(log.site(node, "right"))
    return failing_mask(kind, left, right)


def confirms(log: DynamicTagLog, v: Violation) -> bool:
    """True if the logged tags also violate the assertion at the violation's point."""
    return bool(dynamic_failures(log, v.node, v.kind)[(v.gid,) + tuple(v.element)])
