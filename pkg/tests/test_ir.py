from collections import Counter

import pytest

from tagflow.dsl import bind_constants, parse
from tagflow.dsl import ast as A
from tagflow.ir import CapExceeded, LoweringError, MemorySafetyError, lower, validate_memory_safety
from tagflow.ir import nodes as N

from kernels import BINDINGS, load, lower_source, mutant_source, source


def is_matmul(v) -> bool:
    return isinstance(v, A.Call) and isinstance(v.func, A.Name) and v.func.id == "matmul"


def store_counts_from_ast(body, trips=1, out=None):
    """Stores per source line by multiplying enclosing trip counts."""
    out = Counter() if out is None else out
    for s in body:
        if isinstance(s, A.For):
            store_counts_from_ast(s.body, trips * (s.stop.value - s.start.value), out)
        elif isinstance(s, A.Assign):
            # element stores, plus register copies such as ``r = tile[i]``
            n = sum((isinstance(t, A.Subscript) or isinstance(v, A.Subscript)) and not is_matmul(v)
                    for t, v in zip(s.targets, s.values))
            if n:
                out[s.pos.line] += trips * n
    return out


@pytest.mark.parametrize("name", sorted(BINDINGS))
def test_store_instance_counts_match_trip_count_product(name):
    bound = bind_constants(parse(source(name)), BINDINGS[name])
    expected = store_counts_from_ast(bound.kernel.body)
    ir = load(name)
    got = Counter(n.point.line for n in ir.nodes if isinstance(n, N.Store))
    assert got == expected


def test_attention_outer_loop_unrolled_twice():
    ir = load("flash_attn")
    asserts = ir.assertions()
    by_line = Counter(a.point.line for a in asserts)
    # sq/Bc = 2 outer tiles, 16 j-steps each for the first; 4 kc x 4 db for the second
    assert sorted(by_line.values()) == [32, 32]
    first = [a for a in asserts if a.point.line == min(by_line)]
    instances = {a.point.instance for a in first}
    assert len(instances) == 32
    assert {inst[0] for inst in instances} == {0, 1}
    assert not any(isinstance(n, A.For) for n in ir.nodes)


def test_phases_follow_barriers():
    ir = load("flash_attn")
    barriers = [n for n in ir.nodes if isinstance(n, N.Barrier)]
    assert len(barriers) == 4
    assert ir.num_phases == 5
    phases = [n.phase for n in ir.nodes]
    assert phases == sorted(phases)
    for b in barriers:
        assert all(n.phase > b.phase for n in ir.nodes[ir.nodes.index(b) + 1:])


def test_empty_range_contributes_nothing():
    src = ("def k(A: Tensor((4,), fp32)):\n    tid = threadIdx.x\n"
           "    for i in range(0):\n        A[tid] = 1.0\n")
    ir = lower(bind_constants(parse(src), {"threads": 4}))
    assert not [n for n in ir.nodes if isinstance(n, N.Store)]


def test_attention_fixture_is_memory_safe():
    validate_memory_safety(load("flash_attn"))


def test_out_of_bounds_reports_first_offender():
    src = mutant_source("flash_attn", "kvh, tid % 16]", "kvh, tid % 32]")
    ir = lower_source(src, BINDINGS["flash_attn"])
    with pytest.raises(MemorySafetyError) as err:
        validate_memory_safety(ir)
    e = err.value
    # tid 16 is the first thread whose chunk index leaves the 16-chunk row
    assert (e.block, e.thread, e.tile) == (0, 16, "gK")
    assert e.point.instance == (0, 0)


def test_incompatible_view_rejected():
    src = ("def k(A: Tensor((4,), fp32)):\n    s = make_shared((16,), u32)\n"
           "    v = s.view((12,), u32)\n")
    with pytest.raises(MemorySafetyError, match="view"):
        validate_memory_safety(lower(bind_constants(parse(src), {"threads": 4})))


def test_instance_cap():
    with pytest.raises(CapExceeded):
        lower(bind_constants(parse(source("flash_attn")), BINDINGS["flash_attn"]), instance_cap=100)


def test_matmul_needs_whole_warps():
    with pytest.raises(LoweringError, match="64-lane"):
        load("mfma_single", threads=32)
