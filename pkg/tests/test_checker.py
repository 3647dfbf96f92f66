import json

import numpy as np
import pytest

from tagflow.checker import (
    CheckReport, DeclError, check, compile_assertions, compile_tag_decls, validate_report,
)
from tagflow.interp import run_with_dynamic_tags
from tagflow.ir import CapExceeded
from tagflow.ir import nodes as N
from tagflow.oracle import dynamic_failures

from kernels import BINDINGS, MUTANTS, load, lower_source, mutant_source

NW_MUTANT = next(m for m in MUTANTS if m[2].startswith("nw = (wid & 1)"))


@pytest.fixture(scope="module")
def nw_mutant():
    name, old, new = NW_MUTANT
    return lower_source(mutant_source(name, old, new), BINDINGS[name])


def test_attention_constraints():
    ir = load("flash_attn")
    first, second = compile_assertions(ir)
    assert (first.kind, second.kind) == ("conformity", "conformity")
    # 2 outer tiles x 16 j-steps, 8 element positions, 512 threads in each of 4 blocks
    assert len(first.nodes) == 32 and first.extents == (8,)
    assert first.domain_size(ir.total_threads) == 4 * 512 * 32 * 8
    node = ir.nodes[second.nodes[0]]
    assert (node.left.decl, node.right.decl) == ("tV8", "tP")
    assert ir.decls["tV8"].root == "tV"
    load_tv = next(n for n in ir.nodes if isinstance(n, N.Store) and n.dst.decl == "tV")
    assert ir.root_of(load_tv.value.access.decl).name == "sV"


def test_no_assertions():
    src = "def k(A: Tensor((4,), fp32)):\n    A[threadIdx.x] = 1.0\n"
    ir = lower_source(src, {"threads": 4})
    assert compile_assertions(ir) == []
    assert check(ir).to_json() == {"status": "pass", "checked": 0}


@pytest.mark.parametrize("name", [n for n in BINDINGS if n != "two_writers"])
def test_fixtures_pass(name):
    ir = load(name)
    report = check(ir)
    assert report.passed
    domain = sum(c.domain_size(ir.total_threads) for c in compile_assertions(ir))
    assert report.to_json() == {"status": "pass", "checked": domain}
    validate_report(report.to_json())


def test_first_violation_is_first_dynamic_mismatch(nw_mutant):
    ir = nw_mutant
    report = check(ir)
    assert not report.passed
    v = report.violations[0]
    assert v.point.line == 67
    # enumerate the dynamic failures in (node, thread, element) order
    log = run_with_dynamic_tags(ir, {}, table=report.trace.table, check_safety=False).log
    first = None
    for c in compile_assertions(ir):
        for node in c.nodes:
            hits = np.argwhere(dynamic_failures(log, node, c.kind))
            if len(hits):
                first = (node, tuple(int(x) for x in hits[0]))
                break
        if first:
            break
    assert first == (v.node, (v.gid,) + tuple(v.element))


def test_two_writers_lists_both_points():
    ir = load("two_writers")
    report = check(ir)
    assert report.total_violations == 64
    v = report.violations[0]
    assert v.kind == "non-conformity"
    assert v.left.tag == "top"
    stores = [n.point for n in ir.nodes if isinstance(n, N.Store) and n.dst.decl == "s"]
    assert len(stores) == 2 and set(stores) <= set(v.writers)
    doc = report.to_json()
    validate_report(doc)
    assert {p.line for p in stores} <= {w["line"] for w in doc["violations"][0]["writers"]}


def test_truncation_per_assertion(nw_mutant):
    report = check(nw_mutant, max_violations=3)
    doc = report.to_json()
    assert doc["truncated"] is True
    assert all(len(r.violations) <= 3 for r in report.results)
    assert doc["total_violations"] > len(doc["violations"])
    validate_report(doc)


def test_report_bytes_stable_across_runs_and_workers(nw_mutant):
    texts = {check(nw_mutant, workers=w).dumps() for w in (1, 1, 3, 8)}
    assert len(texts) == 1
    validate_report(json.loads(texts.pop()))


def test_schema_rejects_malformed():
    import jsonschema
    with pytest.raises(jsonschema.ValidationError):
        validate_report({"status": "pass"})
    with pytest.raises(jsonschema.ValidationError):
        validate_report({"status": "fail", "checked": 1})


def test_domain_cap():
    with pytest.raises(CapExceeded):
        check(load("flash_attn"), domain_cap=1000)


def test_text_report(nw_mutant):
    text = check(nw_mutant).to_text()
    assert text.startswith("FAIL attn:")
    assert "line 67" in text


def test_external_tag_decls():
    src = ("def k(A: Tensor((n,), u32), O: Tensor((n,), u32), n: const = threads):\n"
           "    tid = threadIdx.x\n    r = make_local((1,), u32)\n    q = make_local((1,), u32)\n"
           "    r[0] = A[tid]\n    q[0] = A[(tid + 1) % n]\n    assert tag(r[0]) != tag(q[0])\n    O[tid] = r[0]\n")
    ir = lower_source(src, {"threads": 64})
    # without tags both sides are bottom, which fails non-conformity
    assert not check(ir).passed
    decls = compile_tag_decls(ir, "tag TA = A[i] -> (i % n,)\n")
    assert check(ir, decls).passed
    with pytest.raises(DeclError, match="not a global"):
        compile_tag_decls(ir, "tag X = r[i] -> (i,)\n")
    with pytest.raises(DeclError, match="rank"):
        compile_tag_decls(ir, "tag X = A[i, j] -> (i,)\n")
    with pytest.raises(DeclError):
        compile_tag_decls(ir, "tag X = A[i] -> (zz,)\n")
    with pytest.raises(DeclError):
        compile_tag_decls(ir, "tag X = A[i] -> (i,\n")


def test_report_type():
    assert isinstance(check(load("select")), CheckReport)


def test_documented_schema_matches_packaged():
    from importlib import resources
    from pathlib import Path
    docs = Path(__file__).resolve().parents[1] / "docs" / "report.schema.json"
    packaged = resources.files("tagflow.data").joinpath("report.schema.json").read_text()
    assert json.loads(docs.read_text()) == json.loads(packaged)
