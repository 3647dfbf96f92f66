import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from tagflow.interp import run_with_dynamic_tags
from tagflow.ir import nodes as N
from tagflow.tags import BOTTOM, TOP, TagTable, leq, merge, propagate
from tagflow.tags.lattice import (
    BOTTOM_ID, TOP_ID, fold_ids, leq_ids, merge_ids, reinterpret_ids, scatter_merge,
)
from tagflow.tags.state import apply_tag_decl

from kernels import load

small_tuples = st.tuples(st.integers(0, 3), st.integers(0, 3))
tags = st.one_of(st.just(BOTTOM), st.just(TOP), small_tuples)
LAW = settings(max_examples=1000, deadline=None, derandomize=True)


@LAW
@given(tags, tags)
def test_merge_commutative(a, b):
    assert merge(a, b) == merge(b, a)


@LAW
@given(tags, tags, tags)
def test_merge_associative(a, b, c):
    assert merge(merge(a, b), c) == merge(a, merge(b, c))


@LAW
@given(tags)
def test_idempotent_identity_absorbing(a):
    assert merge(a, a) == a
    assert merge(BOTTOM, a) == a
    assert merge(a, TOP) is TOP


@settings(max_examples=2000, deadline=None, derandomize=True)
@given(tags, tags)
def test_merge_is_least_upper_bound(a, b):
    m = merge(a, b)
    assert leq(a, m) and leq(b, m)
    for c in (BOTTOM, TOP, a, b, (9, 9)):
        if leq(a, c) and leq(b, c):
            assert leq(m, c)


@settings(max_examples=400, deadline=None, derandomize=True)
@given(st.lists(tags, min_size=1, max_size=16))
def test_id_operations_agree_with_tags(items):
    table = TagTable()
    ids = np.array([table.intern(t) for t in items], dtype=np.int32)
    expect = BOTTOM
    for t in items:
        expect = merge(expect, t)
    assert table.lookup(fold_ids(ids)) == expect
    pair = merge_ids(ids[:-1], ids[1:])
    assert [table.lookup(x) for x in pair] == [merge(a, b) for a, b in zip(items, items[1:])]
    target = np.zeros(1, dtype=np.int32)
    scatter_merge(target, np.zeros(len(ids), dtype=np.int64), ids)
    assert table.lookup(target[0]) == expect


def test_documented_merges():
    assert merge(BOTTOM, (3, 1, 5)) == (3, 1, 5)
    assert merge((2, 7), (2, 7)) == (2, 7)
    assert merge((1, 0), (2, 0)) is TOP


def test_byte_folds():
    table = TagTable()
    t = table.intern((5, 0, 3))
    assert table.lookup(reinterpret_ids(np.full(16, t, np.int32), 16)[0]) == (5, 0, 3)
    a, b = table.intern((1, 0)), table.intern((2, 0))
    assert reinterpret_ids(np.array([a, a, b, b], np.int32), 4)[0] == TOP_ID
    assert list(reinterpret_ids(np.array([a, a, b, b], np.int32), 2)) == [a, b]


def tag_bindings(ir):
    return {n.name: n for n in ir.nodes if isinstance(n, N.TagBinding)}


def test_tag_function_values():
    b = tag_bindings(load("flash_attn"))
    assert apply_tag_decl(b["TQ"], (33, 5, 17)) == (1, 0, 17)
    assert apply_tag_decl(b["TV"], (7, 0, 40)) == (7, 0, 8)


def test_value_tile_tags_match_coordinate_evaluator():
    b = tag_bindings(load("flash_attn"))["TV"]
    for s in range(64):
        for e in range(128):
            assert apply_tag_decl(b, (s, 0, e)) == (s, 0, e % 32)


def site_tags(trace, line, role):
    idx = next(i for i, n in enumerate(trace.ir.nodes) if n.point.line == line and isinstance(n, N.Assertion))
    return trace.site(idx, role)


def test_select_keeps_load_tag():
    ir = load("select")
    trace = propagate(ir)
    node = next(i for i, n in enumerate(ir.nodes) if isinstance(n, N.Assertion))
    left = trace.site(node, "left").element_tags.reshape(-1)
    right = trace.site(node, "right").element_tags.reshape(-1)
    assert np.array_equal(left, right)
    assert [trace.table.lookup(x) for x in left[:3]] == [(0, 7), (1, 7), (2, 7)]
    report_table = trace.table
    dyn = run_with_dynamic_tags(ir, {}, table=report_table)
    assert np.array_equal(fold_ids(dyn.log.site(node, "left")).reshape(-1), left)


def test_same_phase_collision_is_top():
    ir = load("two_writers")
    trace = propagate(ir)
    node = next(i for i, n in enumerate(ir.nodes) if isinstance(n, N.Assertion))
    assert (trace.site(node, "left").element_tags == TOP_ID).all()


def test_reset_clears_stale_tags():
    ir = load("reuse")
    trace = propagate(ir)
    nodes = [i for i, n in enumerate(ir.nodes) if isinstance(n, N.Assertion)]
    for i in nodes:
        assert TOP_ID not in trace.site(i, "left").element_tags


def without_resets(ir):
    from dataclasses import replace
    return replace(ir, nodes=[n for n in ir.nodes if not isinstance(n, N.Reset)])


def test_missing_reset_turns_reuse_to_top():
    ir = without_resets(load("reuse"))
    trace = propagate(ir)
    nodes = [i for i, n in enumerate(ir.nodes) if isinstance(n, N.Assertion)]
    assert TOP_ID not in trace.site(nodes[0], "left").element_tags
    assert (trace.site(nodes[1], "left").element_tags == TOP_ID).all()


def test_double_reset_is_idempotent():
    from dataclasses import replace
    ir = load("reuse")
    doubled = []
    for n in ir.nodes:
        doubled.append(n)
        if isinstance(n, N.Reset):
            doubled.append(n)
    a = propagate(ir)
    b = propagate(replace(ir, nodes=doubled))
    # node indices shift, so compare the captured sites in order
    sa = [a.sites[k].byte_tags for k in sorted(a.sites)]
    sb = [b.sites[k].byte_tags for k in sorted(b.sites)]
    assert all(np.array_equal(x, y) for x, y in zip(sa, sb)) and len(sa) == len(sb)


@settings(max_examples=25, deadline=None, derandomize=True)
@given(st.data())
def test_raising_input_tags_never_lowers_site_tags(data):
    ir = load("mfma_single")
    table = TagTable()
    inputs = {}
    raised = {}
    for d in ir.roots("global"):
        if d.name == "C":
            continue
        n = d.nbytes
        base = np.array(data.draw(st.lists(st.integers(0, 4), min_size=n, max_size=n)), dtype=np.int32)
        base = np.array([BOTTOM_ID if x == 0 else table.intern((int(x),)) for x in base], np.int32)
        up = base.copy()
        mask = np.array(data.draw(st.lists(st.booleans(), min_size=n, max_size=n)))
        up[mask] = TOP_ID
        inputs[d.name], raised[d.name] = base, up
    lo = propagate(ir, input_tags=inputs, table=table)
    hi = propagate(ir, input_tags=raised, table=table)
    for key in lo.sites:
        assert leq_ids(lo.sites[key].byte_tags, hi.sites[key].byte_tags).all()
