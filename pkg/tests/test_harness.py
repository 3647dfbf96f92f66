import json
import logging
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from tagflow.harness import (
    CATEGORIES, ExtractionError, KbError, PlannerParams, Proposal, ScriptedTransport, Task, TransportError,
    extract_source, load_knowledge_base, lower_plan, plan, reward, run_icrl, select, softmax_probabilities,
    update_params, validate,
)
from tagflow.harness.validate import Feedback, RewardWeights
from tagflow.interp import CostCounters

from kernels import source

TASK_DIR = Path(str(resources.files("tagflow.data").joinpath("tasks", "gemm_demo")))
PROPOSALS = json.dumps([
    {"optimization": "split-k", "context": "c1", "score": 0.2},
    {"optimization": "software-pipelining", "context": "c2", "score": 0.8},
])


@pytest.fixture(scope="module")
def kb():
    return load_knowledge_base()


@pytest.fixture(scope="module")
def task():
    return Task.load(TASK_DIR)


def fenced(src: str) -> str:
    return f"Here is the kernel:\n```python\n{src}```\n"


# --- knowledge base ------------------------------------------------------------

def test_shipped_kb(kb):
    assert len(kb) == 12
    assert {e.category for e in kb} == set(CATEGORIES)
    assert [e.name for e in kb] == sorted(e.name for e in kb)
    for e in kb:
        assert e.invariants().strip()


def test_empty_kb_dir(tmp_path):
    assert load_knowledge_base(tmp_path) == []
    assert plan("def k():\n", [], PlannerParams(), ScriptedTransport({})) == []


ENTRY = """---
name: demo
category: local-source
params: {"x": "a"}
---
=== description ===
Demo entry.
=== pattern ===
a = b
=== invariants ===
assert tag(${x}[0]) == tag(b[0])
"""


def test_entry_template_errors(tmp_path):
    (tmp_path / "demo.md").write_text(ENTRY)
    assert load_knowledge_base(tmp_path)[0].invariants(x="q") == "assert tag(q[0]) == tag(b[0])"
    (tmp_path / "demo.md").write_text(ENTRY.replace("== tag(b[0])", "== tag(b[0]"))
    with pytest.raises(KbError, match="demo"):
        load_knowledge_base(tmp_path)
    (tmp_path / "demo.md").write_text(ENTRY)
    (tmp_path / "copy.md").write_text(ENTRY)
    with pytest.raises(KbError, match="duplicate"):
        load_knowledge_base(tmp_path)


# --- planner -------------------------------------------------------------------

def test_plan_sorted(kb):
    got = plan("k", kb, PlannerParams(), ScriptedTransport({"plan": [PROPOSALS]}))
    assert [p.optimization for p in got] == ["software-pipelining", "split-k"]


def test_plan_malformed_twice(kb, caplog):
    t = ScriptedTransport({"plan": ["not json", "[{\"optimization\": \"nope\", \"context\": \"\", \"score\": 1}]"]})
    with caplog.at_level(logging.WARNING, logger="tagflow.harness"):
        assert plan("k", kb, PlannerParams(), t) == []
    assert len(t.requests) == 2
    assert "rejected again" in caplog.text


def test_plan_reask_recovers(kb):
    t = ScriptedTransport({"plan": ["garbage", PROPOSALS]})
    assert len(plan("k", kb, PlannerParams(), t)) == 2


def test_plan_transport_failure_after_retry(kb):
    with pytest.raises(TransportError):
        plan("k", kb, PlannerParams(), ScriptedTransport({"plan": [{"error": "down"}]}))
    ok = ScriptedTransport({"plan": [{"error": "blip"}, PROPOSALS]})
    assert len(plan("k", kb, PlannerParams(), ok)) == 2


def test_demo_script_proposals_reference_kb(kb):
    t = ScriptedTransport.from_file(TASK_DIR / "script.json")
    got = plan(source("gemm_staged"), kb, PlannerParams(), t)
    names = {e.name for e in kb}
    assert got and all(p.optimization in names for p in got)


def test_select_argmax_limit():
    ps = [Proposal("a", "", 0.9), Proposal("b", "", 0.1)]
    assert all(select(ps, 1e-6, s).optimization == "a" for s in range(50))
    assert all(select(ps, 0.0, s).optimization == "a" for s in range(5))


def test_select_reproducible():
    ps = [Proposal(n, "", 0.5) for n in "abcd"]
    assert [select(ps, 1.0, s) for s in range(20)] == [select(ps, 1.0, s) for s in range(20)]


def test_select_frequencies_match_softmax():
    ps = [Proposal("a", "", 0.7), Proposal("b", "", 0.3)]
    rng = np.random.default_rng(0)
    draws = [select(ps, 1.0, rng).optimization for _ in range(10_000)]
    p = np.exp(0.7) / (np.exp(0.7) + np.exp(0.3))
    assert abs(draws.count("a") / 10_000 - p) <= 0.03
    assert np.allclose(softmax_probabilities([0.7, 0.3], 1.0), [p, 1 - p])


def test_select_empty():
    with pytest.raises(ValueError):
        select([], 1.0, 0)


def test_lower_plan_echo_and_few_shot(kb):
    fixture = source("flash_attn")
    t = ScriptedTransport({"lower": [fenced(fixture)]})
    got = lower_plan("k", Proposal("software-pipelining", "ctx", 1.0), kb, t)
    assert got == fixture
    entry = next(e for e in kb if e.name == "software-pipelining")
    sent = t.requests[0][1][-1]["content"]
    assert entry.pattern.strip() in sent and entry.invariants().strip() in sent


def test_lower_plan_without_code(kb):
    t = ScriptedTransport({"lower": ["I would pipeline the loads."]})
    with pytest.raises(ExtractionError):
        lower_plan("k", Proposal("split-k", "", 1.0), kb, t)
    with pytest.raises(ExtractionError):
        extract_source("no fences")


def test_update_params_bookkeeping():
    p0 = PlannerParams()
    p1 = update_params(p0, "be bolder", ScriptedTransport({"update": ["new prompt"]}))
    assert (p1.version, p1.theta) == (1, "new prompt")
    assert p1.rollback(0) == p0
    same = update_params(p1, "x", ScriptedTransport({"update": [{"error": "down"}]}))
    assert same is p1


# --- validation and reward ------------------------------------------------------

def test_validate_staged_candidate(task):
    fb = validate((TASK_DIR / "staged.tk").read_text(), task)
    assert fb.passed and fb.tests_passed
    assert np.isfinite(fb.cost) and fb.cost > 0


def test_validate_attention_fixture():
    t = Task("attn", source("flash_attn"), {"threads": 512, "d": 128, "gqa": 8})
    fb = validate(t.source, t)
    assert fb.passed and fb.check.passed and np.isfinite(fb.cost)


def test_validate_syntax_error(task):
    fb = validate("def k(:\n", task)
    assert fb.stage == "parse" and fb.check is None and fb.cost is None
    assert fb.error == "1:6: unclosed '(' (expected one of: ')')"


def test_validate_mutant_stops_before_tests(task):
    fb = validate((TASK_DIR / "staged_bad_swizzle.tk").read_text(), task)
    assert fb.stage == "check" and fb.violations >= 1
    assert fb.tests_passed is None and fb.cost is None and fb.error is None


def test_validate_wrong_numerics(task):
    src = (TASK_DIR / "staged.tk").read_text().replace("= acc[a]", "= acc[a] * 2.0")
    fb = validate(src, task)
    assert fb.stage == "test" and fb.tests_passed is False and fb.test_diffs


def test_reward_definitions(task):
    base = validate(task.source, task)
    assert reward(base, base.cost) == 0.0
    assert reward(Feedback("check", check=None), 10.0) == 0.0
    bad = validate((TASK_DIR / "staged_bad_swizzle.tk").read_text(), task)
    assert reward(bad, base.cost) == pytest.approx(-0.1 * bad.violations)
    assert reward(bad, base.cost) < 0


class _Three:
    total_violations = 3
    passed = False


def test_reward_three_violations_no_cost():
    fb = Feedback("check", check=_Three())
    assert reward(fb, 100.0) == pytest.approx(-0.3)
    assert reward(fb, 100.0, RewardWeights(w_proc=2.0)) == pytest.approx(-0.6)


def test_reward_from_counted_costs():
    base = CostCounters(global_bytes=2000, shared_bytes=0, barriers=1, instances=100)
    half = CostCounters(global_bytes=1000, shared_bytes=0, barriers=1, instances=100)
    fb = Feedback("ok", tests_passed=True, counters=half, cost=half.cost())
    assert reward(fb, base.cost()) == pytest.approx((2000 + 50 + 1) / (1000 + 50 + 1) - 1)


# --- the loop -------------------------------------------------------------------

def script(tmp_path, lower):
    doc = {"plan": [PROPOSALS], "lower": lower, "evaluate": ["eval"], "analyze": ["grad"],
           "update": ["prompt v1", "prompt v2", "prompt v3"]}
    for name in ("baseline.tk", "staged.tk", "staged_bad_swizzle.tk"):
        (tmp_path / name).write_text((TASK_DIR / name).read_text())
    (tmp_path / "s.json").write_text(json.dumps(doc))
    return ScriptedTransport.from_file(tmp_path / "s.json")


def test_icrl_fixed_point(tmp_path, task, kb):
    res = run_icrl(task, kb, script(tmp_path, [{"code": "baseline.tk"}]), episodes=1, steps=1)
    assert res.best_source == task.source and res.best_reward == 0.0


def test_icrl_correctness_gate(tmp_path, task, kb):
    t = script(tmp_path, [{"code": "staged_bad_swizzle.tk"}, {"code": "baseline.tk"}])
    res = run_icrl(task, kb, t, episodes=1, steps=2)
    assert res.best_source == task.source
    assert res.trajectory.steps[0].violations > 0 and res.trajectory.steps[0].best_reward is None


def test_icrl_demo(task, kb, tmp_path):
    def go():
        t = ScriptedTransport.from_file(TASK_DIR / "script.json")
        return run_icrl(task, kb, t, episodes=3, steps=2, seed=7, log_path=tmp_path / "log.jsonl")
    res = go()
    first = (tmp_path / "log.jsonl").read_bytes()
    best = [b for b in res.trajectory.best_so_far() if b is not None]
    assert best == sorted(best)
    assert len(res.params.thetas) == 4 and res.params.version == 3
    assert res.best_feedback.passed
    assert all(np.isfinite(s.reward) for s in res.trajectory.steps)
    go()
    assert (tmp_path / "log.jsonl").read_bytes() == first
    records = [json.loads(x) for x in first.decode().splitlines()]
    assert [r["type"] for r in records].count("step") == 6


def test_icrl_needs_positive_counts(task, kb):
    with pytest.raises(ValueError):
        run_icrl(task, kb, ScriptedTransport({}), episodes=0)
