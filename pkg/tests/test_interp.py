import numpy as np
import pytest

from tagflow.interp import (
    InterpError, TensorIOError, TensorValue, read_manifest, run, run_with_dynamic_tags, write_manifest,
)
from tagflow.ir import nodes as N
from tagflow.tags import BOTTOM
from tagflow.tags.lattice import BOTTOM_ID, fold_ids

from kernels import lower_source, load
from oracles import dense_attention, triple_loop_matmul


def int_tensor(rng, shape, dtype, lo=-4, hi=5):
    return TensorValue.from_array(rng.integers(lo, hi, shape), dtype)


def test_single_matmul_exact_on_integers():
    rng = np.random.default_rng(0)
    ins = {"A": int_tensor(rng, (32, 8), "bf16"), "B": int_tensor(rng, (8, 32), "bf16")}
    out = run(load("mfma_single"), ins).outputs["C"].to_array()
    assert np.array_equal(out, triple_loop_matmul(ins["A"].to_array(), ins["B"].to_array()))


def test_single_matmul_bf16_inputs():
    rng = np.random.default_rng(1)
    ins = {"A": TensorValue.from_array(rng.uniform(-1, 1, (32, 8)), "bf16"),
           "B": TensorValue.from_array(rng.uniform(-1, 1, (8, 32)), "bf16")}
    out = run(load("mfma_single"), ins).outputs["C"].to_array()
    ref = triple_loop_matmul(ins["A"].to_array(), ins["B"].to_array())
    assert np.max(np.abs(out - ref) / np.maximum(np.abs(ref), 1e-3)) <= 1e-5


def test_staged_gemm_exact():
    rng = np.random.default_rng(2)
    ins = {"A": int_tensor(rng, (128, 64), "bf16"), "Bt": int_tensor(rng, (128, 64), "bf16")}
    out = run(load("gemm_staged"), ins).outputs["C"].to_array()
    assert np.array_equal(out, triple_loop_matmul(ins["A"].to_array(), ins["Bt"].to_array().T))


def test_attention_matches_dense_oracle():
    rng = np.random.default_rng(0)
    q = TensorValue.from_array(rng.uniform(-1, 1, (128, 8, 128)), "bf16")
    k = TensorValue.from_array(rng.uniform(-1, 1, (128, 1, 128)), "bf16")
    v = TensorValue.from_array(rng.uniform(0.5, 1.5, (128, 1, 128)), "bf16")
    out = run(load("flash_attn"), {"Q": q, "K": k, "V": v}).outputs["O"].to_array()
    ref = dense_attention(q.to_array(), k.to_array(), v.to_array(), 8)
    assert np.max(np.abs(out - ref) / np.abs(ref)) <= 2e-2


def test_copy_through_shared_is_identity():
    data = np.random.default_rng(3).integers(0, 256, 1024, dtype=np.uint8).tobytes()
    x = TensorValue("u32", (256,), data)
    res = run(load("copy_shared"), {"X": x})
    assert res.outputs["Y"].data == data
    # X is read twice (staging and reference), Y written once; shared written and read once
    c = res.counters
    assert (c.global_bytes, c.shared_bytes, c.barriers) == (3 * 1024, 2 * 1024, 2)


def test_runs_are_deterministic():
    rng = np.random.default_rng(4)
    ins = {"A": int_tensor(rng, (128, 64), "bf16"), "Bt": int_tensor(rng, (128, 64), "bf16")}
    a, b = run(load("gemm_staged"), ins), run(load("gemm_staged"), ins)
    assert a.outputs == b.outputs and a.counters == b.counters


def test_input_validation():
    ir = load("mfma_single")
    with pytest.raises(InterpError, match="not a global"):
        run(ir, {"Z": TensorValue.zeros("bf16", (32, 8))})
    with pytest.raises(InterpError):
        run(ir, {"A": TensorValue.zeros("fp32", (32, 8))})
    with pytest.raises(InterpError):
        run(ir, {"A": TensorValue.zeros("bf16", (8, 32))})


def test_constant_store_logged_bottom():
    src = ("def k(A: Tensor((n,), fp32), n: const = threads):\n"
           "    tag T = A[i] -> (i,)\n    tid = threadIdx.x\n"
           "    s = make_shared((threads,), fp32)\n    s[tid] = 2.0\n    A[tid] = s[tid]\n")
    ir = lower_source(src, {"threads": 64})
    log = run_with_dynamic_tags(ir, {}).log
    stores = [r for r in log.records() if r.kind == "store" and r.decl == "s"]
    assert len(stores) == 64 * 4
    assert all(r.tag is BOTTOM for r in stores)


def test_attention_operand_tags_pairwise_equal():
    ir = load("flash_attn")
    log = run_with_dynamic_tags(ir, {}).log
    first = next(i for i, n in enumerate(ir.nodes) if isinstance(n, N.Assertion))
    left, right = fold_ids(log.site(first, "left")), fold_ids(log.site(first, "right"))
    assert left.shape == (512 * 4, 8)
    assert np.array_equal(left, right)
    assert (left != BOTTOM_ID).all()


def test_manifest_round_trip(tmp_path):
    t = {"X": TensorValue.from_array(np.arange(12).reshape(3, 4), "fp32"),
         "Y": TensorValue.from_array(np.ones(5), "bf16")}
    write_manifest(tmp_path / "m.json", t)
    assert read_manifest(tmp_path / "m.json") == t


def test_manifest_errors(tmp_path):
    write_manifest(tmp_path / "m.json", {"X": TensorValue.zeros("u32", (4,))})
    (tmp_path / "X.bin").write_bytes(b"\0" * 3)
    with pytest.raises(TensorIOError, match="bytes"):
        read_manifest(tmp_path / "m.json")
    (tmp_path / "X.bin").unlink()
    with pytest.raises(TensorIOError, match="not found"):
        read_manifest(tmp_path / "m.json")
    with pytest.raises(TensorIOError):
        TensorValue("fp32", (2,), b"\0" * 7)
