"""Command-line entry point: ``tagflow check | run | icrl``.

Exit codes: 0 success, 1 assertion violations, 2 input or configuration
error (parse, binding, lowering, memory safety, tag declarations, tensor
I/O, task files), 3 a cap was exceeded, 4 the learning loop found no
passing candidate.  Reports go to stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checker import DEFAULT_DOMAIN_CAP, DEFAULT_MAX_VIOLATIONS, DeclError, check, compile_tag_decls
from .dsl import BindError, DslSyntaxError, bind_constants, parse
from .interp import InterpError, TensorIOError, read_manifest, run, write_manifest
from .ir import DEFAULT_INSTANCE_CAP, CapExceeded, LoweringError, MemorySafetyError, lower, validate_memory_safety
from .tags import TagError

EXIT_OK, EXIT_VIOLATIONS, EXIT_INPUT, EXIT_CAP, EXIT_NO_CANDIDATE = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _const(text: str) -> tuple[str, int]:
    name, sep, value = text.partition("=")
    if not sep or not name.strip():
        raise argparse.ArgumentTypeError(f"expected name=value, got '{text}'")
    try:
        return name.strip(), int(value, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"const '{name}' needs an integer value, got '{value}'") from None


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tagflow", description="Data-flow invariant checking for tile DSL kernels.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def kernel_args(sp):
        sp.add_argument("source", type=Path, help="kernel source file")
        sp.add_argument("--const", "-D", action="append", type=_const, default=[], metavar="NAME=VALUE",
                        help="bind a const parameter or launch constant (repeatable)")
        sp.add_argument("--instance-cap", type=_positive, default=DEFAULT_INSTANCE_CAP,
                        help="maximum unrolled statement instances")
        sp.add_argument("--format", choices=("json", "text"), default="json")
        sp.add_argument("--plot-dir", type=Path, help="write PNG figures to this directory")

    c = sub.add_parser("check", help="check the kernel's tag assertions")
    kernel_args(c)
    c.add_argument("--tags", type=Path, help="file of extra tag statements for global tensors")
    c.add_argument("--max-violations", type=_positive, default=DEFAULT_MAX_VIOLATIONS,
                   help="violations reported per assertion")
    c.add_argument("--domain-cap", type=_positive, default=DEFAULT_DOMAIN_CAP,
                   help="maximum quantified instances per assertion")
    c.add_argument("--workers", type=_positive, default=1)

    r = sub.add_parser("run", help="execute the kernel on input tensors")
    kernel_args(r)
    r.add_argument("--inputs", type=Path, help="input tensor manifest (missing inputs are zero)")
    r.add_argument("--out", type=Path, required=True, help="directory for the output manifest and blobs")

    i = sub.add_parser("icrl", help="run the optimization loop on a task")
    i.add_argument("--task", type=Path, required=True, help="task directory or task.json")
    i.add_argument("--kb", type=Path, help="knowledge base directory (default: the shipped one)")
    i.add_argument("--transport", help="scripted reply file or chat endpoint URL "
                                       "(default: the TAGFLOW_CHAT_ENDPOINT endpoint)")
    i.add_argument("--episodes", type=_positive, default=3)
    i.add_argument("--steps", type=_positive, default=2)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--temperature", type=float, default=1.0)
    i.add_argument("--out", type=Path, required=True, help="directory for best.tk and trajectory.jsonl")
    i.add_argument("--format", choices=("json", "text"), default="json")
    i.add_argument("--plot-dir", type=Path, help="write PNG figures to this directory")
    return p


def _read(path: Path) -> str:
    try:
        return path.read_text()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None


def _lower(args):
    source = _read(args.source)
    try:
        program = bind_constants(parse(source), dict(args.const))
        ir = lower(program, args.instance_cap)
        validate_memory_safety(ir)
    except CapExceeded as exc:
        raise CliError(str(exc), EXIT_CAP) from None
    except DslSyntaxError as exc:
        raise CliError(f"{args.source}:{exc}") from None
    except (BindError, LoweringError, MemorySafetyError) as exc:
        raise CliError(f"{args.source}: {exc}") from None
    return ir


def _emit(doc: dict, text: str, fmt: str) -> None:
    sys.stdout.write(json.dumps(doc, sort_keys=True, indent=2) + "\n" if fmt == "json" else text + "\n")


def cmd_check(args) -> int:
    ir = _lower(args)
    try:
        decls = compile_tag_decls(ir, _read(args.tags)) if args.tags else []
        report = check(ir, decls, workers=args.workers, max_violations=args.max_violations,
                       domain_cap=args.domain_cap)
    except CapExceeded as exc:
        raise CliError(str(exc), EXIT_CAP) from None
    except (DeclError, TagError, LoweringError) as exc:
        raise CliError(f"{args.tags or args.source}: {exc}") from None
    sys.stdout.write(report.dumps() + "\n" if args.format == "json" else report.to_text() + "\n")
    if args.plot_dir:
        from .plotting import plot_check
        plot_check(report, args.plot_dir)
    return EXIT_OK if report.passed else EXIT_VIOLATIONS


def cmd_run(args) -> int:
    ir = _lower(args)
    try:
        inputs = read_manifest(args.inputs) if args.inputs else {}
        result = run(ir, inputs, check_safety=False)
        args.out.mkdir(parents=True, exist_ok=True)
        write_manifest(args.out / "manifest.json", result.outputs)
    except (TensorIOError, InterpError) as exc:
        raise CliError(str(exc)) from None
    except OSError as exc:
        raise CliError(f"cannot write outputs to {args.out}: {exc.strerror}") from None
    doc = {"kernel": ir.name, "outputs": sorted(result.outputs), "manifest": str(args.out / "manifest.json"),
           "counters": result.counters.to_json(), "cost": result.counters.cost()}
    _emit(doc, "\n".join(f"{k}: {v}" for k, v in doc.items()), args.format)
    if args.plot_dir:
        from .plotting import plot_counters
        plot_counters(result.counters, ir.name, args.plot_dir)
    return EXIT_OK


def cmd_icrl(args) -> int:
    from .harness import (
        HttpTransport, KbError, Task, TaskError, TransportError, load_knowledge_base, open_transport, run_icrl,
    )
    try:
        task = Task.load(args.task)
        kb = load_knowledge_base(args.kb)
        transport = open_transport(args.transport) if args.transport else HttpTransport()
        args.out.mkdir(parents=True, exist_ok=True)
        log_path = args.out / "trajectory.jsonl"
        res = run_icrl(task, kb, transport, episodes=args.episodes, steps=args.steps, seed=args.seed,
                       temperature=args.temperature, log_path=log_path)
    except (TaskError, KbError, TransportError) as exc:
        raise CliError(str(exc)) from None
    except OSError as exc:
        raise CliError(f"cannot write to {args.out}: {exc.strerror}") from None
    best_path = None
    if res.found:
        best_path = args.out / "best.tk"
        best_path.write_text(res.best_source)
    doc = {"task": task.name, "found": res.found, "best_reward": res.best_reward,
           "best": str(best_path) if best_path else None, "trajectory": str(log_path),
           "theta_version": res.params.version, "steps": len(res.trajectory.steps)}
    _emit(doc, "\n".join(f"{k}: {v}" for k, v in doc.items()), args.format)
    if args.plot_dir:
        from .plotting import plot_rewards
        plot_rewards(res.trajectory, task.name, args.plot_dir)
    return EXIT_OK if res.found else EXIT_NO_CANDIDATE


COMMANDS = {"check": cmd_check, "run": cmd_run, "icrl": cmd_icrl}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"tagflow {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
