import numpy as np
import pytest

from tagflow.checker import check
from tagflow.interp import run_with_dynamic_tags
from tagflow.ir import nodes as N
from tagflow.oracle import compare, confirms, dynamic_failures
from tagflow.tags import TagTable, propagate
from tagflow.tags.lattice import BOTTOM_ID, TOP_ID

from kernels import load


def test_agreement_on_micro_kernels():
    for name in ("mfma_single", "select", "copy_shared", "reuse"):
        ir = load(name)
        trace = propagate(ir)
        log = run_with_dynamic_tags(ir, {}, table=trace.table).log
        a = compare(trace, log)
        assert a.ok and a.sites > 0 and a.bytes_checked > 0


def test_compare_detects_disagreement():
    ir = load("mfma_single")
    trace = propagate(ir)
    log = run_with_dynamic_tags(ir, {}, table=trace.table).log
    key = sorted(set(trace.sites) & set(log.sites))[0]
    site = trace.sites[key]
    site.byte_tags = np.where(site.byte_tags > TOP_ID, BOTTOM_ID, site.byte_tags).astype(np.int32)
    a = compare(trace, log)
    assert not a.ok and a.unsound > 0 and a.bottom_mismatches > 0


def test_compare_needs_shared_table():
    ir = load("select")
    trace = propagate(ir)
    log = run_with_dynamic_tags(ir, {}, table=TagTable()).log
    with pytest.raises(ValueError):
        compare(trace, log)


def test_top_survives_only_statically():
    ir = load("two_writers")
    report = check(ir)
    log = run_with_dynamic_tags(ir, {}, table=report.trace.table).log
    a = compare(report.trace, log)
    # the collision is schedule dependent: static top, dynamic the last writer's tuple
    assert a.ok
    node = next(i for i, n in enumerate(ir.nodes) if isinstance(n, N.Assertion))
    assert (report.trace.site(node, "left").element_tags == TOP_ID).all()
    assert not dynamic_failures(log, node, "non-conformity").all()
    assert not all(confirms(log, v) for v in report.violations)
