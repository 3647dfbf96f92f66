import json
from importlib import resources
from pathlib import Path

import numpy as np

from tagflow.checker import validate_report
from tagflow.cli import main
from tagflow.interp import TensorValue, read_manifest, write_manifest

from kernels import MUTANTS, mutant_source
from oracles import dense_attention

DATA = Path(str(resources.files("tagflow.data")))
FIX = DATA / "fixtures"
TASK = DATA / "tasks" / "gemm_demo"
ATTN = ["-D", "d=128", "-D", "gqa=8", "-D", "threads=512"]


def test_check_attention_passes(capsys):
    assert main(["check", str(FIX / "flash_attn.tk"), "--const", "d=128", "--const", "gqa=8",
                 "--const", "threads=512"]) == 0
    out = capsys.readouterr()
    assert json.loads(out.out)["status"] == "pass"
    assert out.err == ""


def test_check_mutant_fails(tmp_path, capsys):
    name, old, new = MUTANTS[1]
    path = tmp_path / "m.tk"
    path.write_text(mutant_source(name, old, new))
    assert main(["check", str(path), *ATTN, "--workers", "2"]) == 1
    doc = json.loads(capsys.readouterr().out)
    validate_report(doc)
    assert doc["violations"]


def test_check_missing_const(capsys):
    assert main(["check", str(FIX / "flash_attn.tk"), "-D", "d=128", "-D", "threads=512"]) == 2
    out = capsys.readouterr()
    assert out.out == "" and "gqa" in out.err


def test_check_caps(capsys):
    assert main(["check", str(FIX / "flash_attn.tk"), *ATTN, "--domain-cap", "10"]) == 3
    assert main(["check", str(FIX / "flash_attn.tk"), *ATTN, "--instance-cap", "10"]) == 3
    assert capsys.readouterr().out == ""


def test_check_stdout_identical(capsys):
    args = ["check", str(FIX / "two_writers.tk"), "-D", "threads=64"]
    assert main(args) == 1
    first = capsys.readouterr().out
    assert main(args + ["--workers", "4"]) == 1
    assert capsys.readouterr().out == first


def test_check_text_and_plot(tmp_path, capsys):
    assert main(["check", str(FIX / "two_writers.tk"), "-D", "threads=64", "--format", "text",
                 "--plot-dir", str(tmp_path)]) == 1
    assert capsys.readouterr().out.startswith("FAIL two_writers")
    assert (tmp_path / "two_writers_check.png").read_bytes()[:4] == b"\x89PNG"


def test_check_bad_args(capsys):
    assert main(["check"]) == 2
    assert main(["check", str(FIX / "select.tk"), "-D", "threads"]) == 2
    assert main(["check", "/no/such/file.tk"]) == 2


def test_check_tag_file(tmp_path, capsys):
    tags = tmp_path / "tags.tk"
    tags.write_text("tag Z = r[i] -> (i,)\n")
    assert main(["check", str(FIX / "select.tk"), "-D", "threads=64", "--tags", str(tags)]) == 2
    assert "not a global" in capsys.readouterr().err


def test_run_copy_round_trip(tmp_path, capsys):
    data = np.random.default_rng(0).integers(0, 256, 1024, dtype=np.uint8).tobytes()
    write_manifest(tmp_path / "in" / "m.json", {"X": TensorValue("u32", (256,), data)})
    assert main(["run", str(FIX / "copy_shared.tk"), "-D", "threads=128", "-D", "grid_x=2",
                 "--inputs", str(tmp_path / "in" / "m.json"), "--out", str(tmp_path / "out"),
                 "--plot-dir", str(tmp_path / "plots")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["outputs"] == ["X", "Y"]
    assert (tmp_path / "out" / "Y.bin").read_bytes() == data
    assert (tmp_path / "plots" / "copy_counters.png").exists()


def test_run_attention_against_oracle(tmp_path, capsys):
    rng = np.random.default_rng(5)
    q = TensorValue.from_array(rng.uniform(-1, 1, (128, 8, 128)), "bf16")
    k = TensorValue.from_array(rng.uniform(-1, 1, (128, 1, 128)), "bf16")
    v = TensorValue.from_array(rng.uniform(0.5, 1.5, (128, 1, 128)), "bf16")
    write_manifest(tmp_path / "m.json", {"Q": q, "K": k, "V": v})
    assert main(["run", str(FIX / "flash_attn.tk"), *ATTN, "--inputs", str(tmp_path / "m.json"),
                 "--out", str(tmp_path / "o")]) == 0
    o = read_manifest(tmp_path / "o" / "manifest.json")["O"].to_array()
    ref = dense_attention(q.to_array(), k.to_array(), v.to_array(), 8)
    assert np.max(np.abs(o - ref) / np.abs(ref)) <= 2e-2


def test_run_input_errors(tmp_path, capsys):
    write_manifest(tmp_path / "m.json", {"X": TensorValue.zeros("u32", (256,))})
    (tmp_path / "X.bin").unlink()
    args = ["run", str(FIX / "copy_shared.tk"), "-D", "threads=128", "-D", "grid_x=2", "--out", str(tmp_path / "o")]
    assert main(args + ["--inputs", str(tmp_path / "m.json")]) == 2
    write_manifest(tmp_path / "m.json", {"X": TensorValue.zeros("u32", (16,))})
    assert main(args + ["--inputs", str(tmp_path / "m.json")]) == 2
    assert capsys.readouterr().out == ""


def test_icrl_demo(tmp_path, capsys):
    assert main(["icrl", "--task", str(TASK), "--transport", str(TASK / "script.json"),
                 "--out", str(tmp_path), "--plot-dir", str(tmp_path / "plots")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["found"] and Path(doc["best"]).read_text() == (TASK / "staged.tk").read_text()
    lines = (tmp_path / "trajectory.jsonl").read_text().splitlines()
    assert all(isinstance(json.loads(x), dict) for x in lines)
    assert (tmp_path / "plots" / "gemm-demo_rewards.png").exists()


def test_icrl_missing_transport(tmp_path, capsys):
    assert main(["icrl", "--task", str(TASK), "--transport", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path)]) == 2


def test_icrl_all_candidates_violate(tmp_path, capsys):
    (tmp_path / "bad.tk").write_text((TASK / "staged_bad_swizzle.tk").read_text())
    (tmp_path / "s.json").write_text(json.dumps({
        "plan": ['[{"optimization": "split-k", "context": "", "score": 0.5}]'],
        "lower": [{"code": "bad.tk"}], "evaluate": ["e"], "analyze": ["a"], "update": ["u"]}))
    assert main(["icrl", "--task", str(TASK), "--transport", str(tmp_path / "s.json"),
                 "--out", str(tmp_path / "o"), "--episodes", "1", "--steps", "2"]) == 4
    assert json.loads(capsys.readouterr().out)["found"] is False
