"""Discharging assertions against the static tag analysis.

Every assertion instance is checked for every thread and every quantified
element.  A conformity assertion holds when both tags are equal and not top;
a non-conformity assertion holds when the tags differ and neither is top.
Violations of one assertion are ordered by (global thread, statement
instance, element) and only the first ``max_violations`` per assertion are
materialized; the totals are always exact.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..ir.lower import CapExceeded
from ..ir.nodes import Assertion, KernelIr, ProgramPoint
from ..ir.threads import ThreadSpace
from ..tags.engine import TagTrace, propagate
from ..tags.lattice import TOP_ID, TagTable
from .constraints import Constraint, compile_assertions

DEFAULT_MAX_VIOLATIONS = 16
DEFAULT_DOMAIN_CAP = 1 << 26


@dataclass(frozen=True)
class Operand:
    tile: str
    coord: tuple
    tag: object  # "bottom", "top" or a list of ints

    def to_json(self) -> dict:
        return {"tile": self.tile, "coord": list(self.coord), "tag": self.tag}


@dataclass(frozen=True)
class Violation:
    assertion_id: str
    kind: str
    point: ProgramPoint
    gid: int
    thread: int
    block: tuple  # (bx, by)
    left: Operand
    right: Operand
    writers: tuple  # of ProgramPoint
    element: tuple = ()  # quantifier values
    node: int = -1

    def to_json(self) -> dict:
        return {
            "assertion_id": self.assertion_id,
            "kind": self.kind,
            "point": self.point.to_json(),
            "thread": self.thread,
            "block": list(self.block),
            "left": self.left.to_json(),
            "right": self.right.to_json(),
            "writers": [w.to_json() for w in self.writers],
        }

    def describe(self) -> str:
        rel = "==" if self.kind == "conformity" else "!="
        where = f"line {self.point.line} (stmt {self.point.stmt}, instance {list(self.point.instance)})"
        side = lambda o: f"{o.tile}{list(o.coord)} tag {_tag_text(o.tag)}"  # noqa: E731
        text = (f"{self.assertion_id} {self.kind} '{rel}' violated at {where}, block {list(self.block)} "
                f"thread {self.thread}: {side(self.left)} vs {side(self.right)}")
        if self.writers:
            text += "; last writers: " + ", ".join(
                f"line {w.line} instance {list(w.instance)}" for w in self.writers)
        return text


@dataclass
class AssertionResult:
    """Outcome for one source assertion over all of its instances."""

    assertion_id: str
    kind: str
    line: int
    checked: int
    total_violations: int
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.total_violations == 0

    @property
    def truncated(self) -> bool:
        return self.total_violations > len(self.violations)

    def to_json(self) -> dict:
        return {"assertion_id": self.assertion_id, "kind": self.kind, "line": self.line,
                "checked": self.checked, "violations": self.total_violations, "truncated": self.truncated}


@dataclass
class CheckReport:
    kernel: str
    results: list = field(default_factory=list)  # of AssertionResult, in assertion order
    trace: TagTrace | None = None

    @property
    def checked(self) -> int:
        return sum(r.checked for r in self.results)

    @property
    def total_violations(self) -> int:
        return sum(r.total_violations for r in self.results)

    @property
    def violations(self) -> list:
        return [v for r in self.results for v in r.violations]

    @property
    def passed(self) -> bool:
        return self.total_violations == 0

    @property
    def truncated(self) -> bool:
        return any(r.truncated for r in self.results)

    def to_json(self) -> dict:
        if self.passed:
            return {"status": "pass", "checked": self.checked}
        return {
            "status": "fail",
            "checked": self.checked,
            "total_violations": self.total_violations,
            "truncated": self.truncated,
            "assertions": [r.to_json() for r in self.results],
            "violations": [v.to_json() for v in self.violations],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2)

    def to_text(self) -> str:
        if self.passed:
            return f"PASS {self.kernel}: {self.checked} assertion checks hold"
        lines = [f"FAIL {self.kernel}: {self.total_violations} of {self.checked} assertion checks violated"]
        for r in self.results:
            if r.passed:
                lines.append(f"  {r.assertion_id} (line {r.line}): pass")
                continue
            lines.append(f"  {r.assertion_id} (line {r.line}): {r.total_violations} violations")
            lines += ["    " + v.describe() for v in r.violations]
            if r.truncated:
                lines.append(f"    ... {r.total_violations - len(r.violations)} more not shown")
        return "\n".join(lines)


def _tag_text(tag) -> str:
    if tag == "top":
        return "⊤"
    if tag == "bottom":
        return "⊥"
    return "(" + ", ".join(str(x) for x in tag) + ")"


def failing_mask(kind: str, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Elements on which an assertion does not hold, from element tag ids."""
    if kind == "conformity":
        return (left != right) | (left == TOP_ID)
    return (left == right) | (left == TOP_ID) | (right == TOP_ID)


def _scan(trace: TagTrace, ir: KernelIr, nodes: list[int], limit: int) -> dict:
    """node -> (violation count, first ``limit`` failing (gid, node, element) triples)."""
    out = {}
    for i in nodes:
        n: Assertion = ir.nodes[i]
        left = trace.site(i, "left").element_tags
        right = trace.site(i, "right").element_tags
        fail = failing_mask(n.assertion_kind, left, right).reshape(left.shape[0], -1)
        c = int(fail.sum())
        if not c:
            continue
        flat = np.flatnonzero(fail.reshape(-1))[:limit]
        g, e = np.divmod(flat, fail.shape[1])
        out[i] = (c, [(int(gg), i, int(ee)) for gg, ee in zip(g, e)])
    return out


def check(ir: KernelIr, decls: list | None = None, *, workers: int = 1,
          max_violations: int = DEFAULT_MAX_VIOLATIONS, domain_cap: int = DEFAULT_DOMAIN_CAP,
          trace: TagTrace | None = None, table: TagTable | None = None) -> CheckReport:
    """Run the static analysis (unless ``trace`` is given) and discharge every assertion.

    At most ``max_violations`` violations are materialized per assertion.
    """
    constraints = compile_assertions(ir)
    checked = sum(c.domain_size(ir.total_threads) for c in constraints)
    if checked > domain_cap:
        raise CapExceeded(f"assertion domain of {checked} checks exceeds the cap of {domain_cap}",
                          constraints[0].line)
    if trace is None:
        trace = propagate(ir, decls, table=table)
    nodes = [i for c in constraints for i in c.nodes]
    workers = max(1, int(workers))
    if workers == 1:
        found = _scan(trace, ir, nodes, max_violations)
    else:
        batches = [nodes[k::workers] for k in range(workers)]
        found = {}
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(lambda b: _scan(trace, ir, b, max_violations), batches):
                found.update(part)
    results = []
    for c in constraints:
        hits = [found[i] for i in c.nodes if i in found]
        total = sum(h[0] for h in hits)
        first = sorted(t for h in hits for t in h[1])[:max_violations]
        results.append(AssertionResult(c.assertion_id, c.kind, c.line, c.domain_size(ir.total_threads), total,
                                       [_materialize(ir, trace, g, i, e) for g, i, e in first]))
    return CheckReport(ir.name, results, trace)


def _materialize(ir: KernelIr, trace: TagTrace, gid: int, i: int, elem: int) -> Violation:
    n: Assertion = ir.nodes[i]
    space = ThreadSpace(ir, np.array([gid]))
    idx = np.unravel_index(elem, n.extents) if n.extents else ()
    element = tuple(int(x) for x in idx)
    table = trace.table
    sides = []
    writer_ids: set[int] = set()
    for role, acc in (("left", n.left), ("right", n.right)):
        site = trace.site(i, role)
        key = (gid,) + element
        tag_id = int(site.element_tags[key])
        coords = space.coords(acc, n.quantifiers)
        coord = tuple(int(c[(0,) + element]) for c in coords)
        sides.append(Operand(acc.decl, coord, table.to_json(tag_id)))
        writer_ids |= {int(w) for w in np.asarray(site.writers[key]).reshape(-1) if w >= 0}
    writers = tuple(dict.fromkeys(ir.nodes[w].point for w in sorted(writer_ids)))
    return Violation(
        assertion_id=n.assertion_id, kind=n.assertion_kind, point=n.point, gid=gid,
        thread=int(space.tid[0]), block=(int(space.bx[0]), int(space.by[0])),
        left=sides[0], right=sides[1], writers=writers, element=element, node=i,
    )


__all__ = ["AssertionResult", "CheckReport", "Constraint", "Operand", "Violation", "check", "failing_mask"]
