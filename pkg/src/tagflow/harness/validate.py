"""Candidate validation: invariant checks, unit tests and the proxy cost.

A task directory holds ``task.json``::

    {
      "name": "gemm-demo",
      "kernel": "baseline.tk",            # the starting kernel
      "bindings": {"threads": 256},
      "tag_decls": "extra_tags.tk",       # optional tag statements for globals
      "tests": [
        {"seed": 0,
         "inputs": {"A": {"low": -2, "high": 2, "integer": true}, ...},
         "reference": "matmul_nt", "args": ["A", "Bt"], "output": "C",
         "rtol": 1e-5, "atol": 0.0}
      ],
      "cost_weights": {"global_bytes": 1.0, ...},   # optional overrides
      "reward": {"w_perf": 1.0, "w_proc": 1.0, "penalty": 0.1}
    }

Input shapes and element types come from the candidate's global tensor
declarations; values are drawn from a seeded generator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..checker import CheckReport, DeclError, check, compile_tag_decls
from ..dsl import BindError, DslSyntaxError, bind_constants, parse
from ..interp import CostCounters, InterpError, TensorValue, run
from ..ir import LoweringError, MemorySafetyError, lower, validate_memory_safety
from ..tags import TagError
from .references import REFERENCES


class TaskError(ValueError):
    pass


@dataclass(frozen=True)
class UnitTest:
    seed: int
    inputs: dict  # name -> {"low", "high", "integer"}
    reference: str
    args: tuple
    output: str
    rtol: float = 1e-5
    atol: float = 0.0
    options: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RewardWeights:
    w_perf: float = 1.0
    w_proc: float = 1.0
    penalty: float = 0.1


@dataclass
class Task:
    name: str
    source: str
    bindings: dict
    tag_decls: str | None = None
    tests: list = field(default_factory=list)
    cost_weights: dict = field(default_factory=dict)
    reward: RewardWeights = field(default_factory=RewardWeights)

    @classmethod
    def load(cls, path: str | Path) -> "Task":
        path = Path(path)
        doc_path = path / "task.json" if path.is_dir() else path
        try:
            doc = json.loads(doc_path.read_text())
            base = doc_path.parent
            source = (base / doc["kernel"]).read_text()
            decls = (base / doc["tag_decls"]).read_text() if doc.get("tag_decls") else None
            tests = []
            for t in doc.get("tests", []):
                if t["reference"] not in REFERENCES:
                    raise TaskError(f"unknown reference '{t['reference']}'")
                tests.append(UnitTest(int(t.get("seed", 0)), dict(t["inputs"]), t["reference"],
                                      tuple(t["args"]), t["output"], float(t.get("rtol", 1e-5)),
                                      float(t.get("atol", 0.0)), dict(t.get("options", {}))))
            return cls(doc["name"], source, dict(doc.get("bindings", {})), decls, tests,
                       dict(doc.get("cost_weights", {})), RewardWeights(**doc.get("reward", {})))
        except OSError as exc:
            raise TaskError(f"cannot read task {path}: {exc}") from None
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise TaskError(f"malformed task {doc_path}: {exc!r}") from None


@dataclass
class Feedback:
    stage: str  # where validation stopped: parse, bind, lower, safety, check, test, ok
    error: str | None = None  # pipeline error before checking, verbatim
    check: CheckReport | None = None
    tests_passed: bool | None = None
    test_diffs: list = field(default_factory=list)
    counters: CostCounters | None = None
    cost: float | None = None

    @property
    def passed(self) -> bool:
        return self.stage == "ok"

    @property
    def violations(self) -> int:
        return self.check.total_violations if self.check is not None else 0

    def to_json(self) -> dict:
        doc: dict = {"stage": self.stage, "passed": self.passed}
        if self.error is not None:
            doc["error"] = self.error
        if self.check is not None:
            doc["check"] = self.check.to_json()
        if self.tests_passed is not None:
            doc["tests_passed"] = self.tests_passed
            doc["test_diffs"] = list(self.test_diffs)
        if self.counters is not None:
            doc["counters"] = self.counters.to_json()
            doc["cost"] = self.cost
        return doc

    def summary(self) -> str:
        if self.error is not None:
            return f"{self.stage} error: {self.error}"
        if self.check is not None and not self.check.passed:
            return self.check.to_text()
        if self.tests_passed is False:
            return "unit tests failed:\n" + "\n".join(self.test_diffs)
        return f"all checks and tests pass; proxy cost {self.cost}"


def make_inputs(ir, test: UnitTest) -> dict:
    rng = np.random.default_rng(test.seed)
    globals_ = {d.name: d for d in ir.roots("global")}
    out = {}
    for name in sorted(test.inputs):
        if name not in globals_:
            raise TaskError(f"test input '{name}' is not a global tensor of the kernel")
        spec = test.inputs[name]
        d = globals_[name]
        vals = rng.uniform(float(spec.get("low", -1.0)), float(spec.get("high", 1.0)), size=d.extents)
        if spec.get("integer"):
            vals = np.rint(vals)
        out[name] = TensorValue.from_array(vals, d.dtype)
    return out


def _compare(name: str, got: np.ndarray, want: np.ndarray, rtol: float, atol: float) -> str | None:
    if got.shape != want.shape:
        return f"{name}: shape {got.shape} differs from expected {want.shape}"
    bad = ~np.isclose(got, want, rtol=rtol, atol=atol) | ~np.isfinite(got)
    if not bad.any():
        return None
    idx = tuple(int(i) for i in np.argwhere(bad)[0])
    return (f"{name}: {int(bad.sum())} of {bad.size} elements outside rtol={rtol} atol={atol}; "
            f"first at {list(idx)}: got {got[idx]!r}, expected {want[idx]!r}")


def validate(candidate_source: str, task: Task, *, workers: int = 1) -> Feedback:
    """parse, bind, lower, check memory safety, propagate tags, check assertions, then run the tests."""
    try:
        kernel = parse(candidate_source)
    except DslSyntaxError as exc:
        return Feedback("parse", error=str(exc))
    try:
        program = bind_constants(kernel, task.bindings)
    except BindError as exc:
        return Feedback("bind", error=str(exc))
    try:
        ir = lower(program)
    except LoweringError as exc:
        return Feedback("lower", error=str(exc))
    try:
        validate_memory_safety(ir)
    except MemorySafetyError as exc:
        return Feedback("safety", error=str(exc))
    try:
        decls = compile_tag_decls(ir, task.tag_decls) if task.tag_decls else []
        report = check(ir, decls, workers=workers)
    except (DeclError, TagError, LoweringError) as exc:
        return Feedback("check", error=str(exc))
    if not report.passed:
        return Feedback("check", check=report)
    diffs = []
    counters = None
    try:
        for test in task.tests or [None]:
            inputs = make_inputs(ir, test) if test else {}
            result = run(ir, inputs, check_safety=False)
            counters = counters or result.counters
            if test is None:
                continue
            args = [inputs[a].to_array() for a in test.args]
            want = REFERENCES[test.reference](*args, **test.options)
            got = result.outputs[test.output].to_array()
            diff = _compare(test.output, got, want, test.rtol, test.atol)
            if diff:
                diffs.append(f"test seed {test.seed}: {diff}")
    except (InterpError, TaskError, KeyError) as exc:
        return Feedback("test", check=report, tests_passed=False, test_diffs=[f"{type(exc).__name__}: {exc}"])
    if diffs:
        return Feedback("test", check=report, tests_passed=False, test_diffs=diffs)
    return Feedback("ok", check=report, tests_passed=True, counters=counters,
                    cost=counters.cost(task.cost_weights))


def reward(feedback: Feedback, baseline_cost, weights: RewardWeights | None = None) -> float:
    """Performance term from the proxy cost plus a penalty per assertion violation.

    ``baseline_cost`` is a number or anything with a ``baseline_cost`` attribute
    (a trajectory).
    """
    w = weights or RewardWeights()
    base = getattr(baseline_cost, "baseline_cost", baseline_cost)
    perf = 0.0
    if feedback.cost is not None and feedback.cost > 0 and base:
        perf = base / feedback.cost - 1.0
    return w.w_perf * perf - w.w_proc * w.penalty * feedback.violations
