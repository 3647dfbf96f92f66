"""Planner, sampler, lowering agent and prompt updates."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .kb import KbEntry
from .transport import Transport, TransportError, message

log = logging.getLogger("tagflow.harness")

DEFAULT_THETA = (
    "You optimize GPU kernels written in a tile DSL. Propose rewrites drawn from the knowledge base, "
    "each with a context that states how it applies to this kernel and which tag assertions must keep "
    "holding, and a score in [0, 1] for how promising it is."
)

PROPOSAL_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "properties": {
            "optimization": {"type": "string"},
            "context": {"type": "string"},
            "score": {"type": "number", "minimum": 0, "maximum": 1},
        },
        "required": ["optimization", "context", "score"],
        "additionalProperties": False,
    },
}


class PlanError(ValueError):
    pass


class ExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class Proposal:
    optimization: str
    context: str
    score: float

    def to_json(self) -> dict:
        return {"optimization": self.optimization, "context": self.context, "score": self.score}


@dataclass(frozen=True)
class PlannerParams:
    theta: str = DEFAULT_THETA
    version: int = 0
    history: tuple = ()  # earlier prompts, oldest first

    def __post_init__(self) -> None:
        if not self.theta.strip():
            raise ValueError("planner prompt must be non-empty")

    def rollback(self, version: int) -> "PlannerParams":
        if not 0 <= version < self.version:
            raise ValueError(f"no planner version {version}")
        return PlannerParams(self.history[version], version, self.history[:version])

    @property
    def thetas(self) -> tuple:
        return self.history + (self.theta,)


def _json_payload(reply: str):
    fenced = re.search(r"```(?:json)?\s*\n(.*?)```", reply, re.S)
    text = fenced.group(1) if fenced else reply
    return json.loads(text)


def parse_proposals(reply: str, kb: list[KbEntry]) -> list[Proposal]:
    """Schema-validated proposals sorted by score (descending, ties by name)."""
    try:
        doc = _json_payload(reply)
        jsonschema.validate(doc, PROPOSAL_SCHEMA)
    except (json.JSONDecodeError, jsonschema.ValidationError) as exc:
        raise PlanError(f"malformed proposals: {exc.args[0] if exc.args else exc}") from None
    names = {e.name for e in kb}
    out = []
    for item in doc:
        if item["optimization"] not in names:
            raise PlanError(f"proposal names unknown optimization '{item['optimization']}'")
        if not math.isfinite(item["score"]):
            raise PlanError("proposal score is not finite")
        out.append(Proposal(item["optimization"], item["context"], float(item["score"])))
    return sorted(out, key=lambda p: (-p.score, p.optimization))


def _ask(transport: Transport, messages: list[dict], purpose: str) -> str:
    """One transport call with a single retry on failure."""
    try:
        return transport.complete(messages, purpose)
    except TransportError as exc:
        log.warning("%s request failed (%s); retrying once", purpose, exc)
        return transport.complete(messages, purpose)


def plan(kernel_source: str, kb: list[KbEntry], params: PlannerParams, transport: Transport) -> list[Proposal]:
    """Ask for proposals; re-ask once on malformed output, then give up with an empty list."""
    if not kb:
        return []
    catalogue = "\n".join(f"- {e.summary()}" for e in kb)
    messages = [
        message("system", params.theta),
        message("user", "Knowledge base:\n" + catalogue + "\n\nKernel:\n```\n" + kernel_source + "```\n\n"
                "Reply with a JSON array of {\"optimization\", \"context\", \"score\"} objects."),
    ]
    reply = _ask(transport, messages, "plan")
    try:
        return parse_proposals(reply, kb)
    except PlanError as exc:
        log.warning("planner reply rejected: %s; asking again", exc)
    messages += [message("assistant", reply),
                 message("user", "That reply was invalid. Reply with only the JSON array.")]
    reply = _ask(transport, messages, "plan")
    try:
        return parse_proposals(reply, kb)
    except PlanError as exc:
        log.warning("planner reply rejected again: %s; no proposals this step", exc)
        return []


def softmax_probabilities(scores, temperature: float) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if temperature <= 0:
        p = (s == s.max()).astype(np.float64)
        return p / p.sum()
    z = (s - s.max()) / temperature
    e = np.exp(z)
    return e / e.sum()


def select(proposals: list[Proposal], temperature: float, seed: int | np.random.Generator) -> Proposal:
    """Sample a proposal with probability proportional to exp(score / temperature)."""
    if not proposals:
        raise ValueError("cannot select from an empty proposal list")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p = softmax_probabilities([x.score for x in proposals], temperature)
    return proposals[int(rng.choice(len(proposals), p=p))]


def extract_source(reply: str) -> str:
    """The first fenced code block of a reply."""
    m = re.search(r"```[\w-]*[ \t]*\n(.*?)```", reply, re.S)
    if not m or not m.group(1).strip():
        raise ExtractionError("reply contains no fenced DSL code block")
    return m.group(1)


def lower_plan(kernel_source: str, proposal: Proposal, kb: list[KbEntry], transport: Transport) -> str:
    """Ask the lowering agent to apply a proposal; returns the candidate source."""
    entry = next((e for e in kb if e.name == proposal.optimization), None)
    if entry is None:
        raise PlanError(f"unknown optimization '{proposal.optimization}'")
    example = (f"Example of {entry.name}:\n```\n{entry.pattern}\n```\n"
               f"Invariants that must keep holding:\n```\n{entry.invariants()}\n```")
    messages = [
        message("system", "Rewrite the kernel in the tile DSL. Reply with the full kernel in one fenced block."),
        message("user", f"{example}\n\nApply: {proposal.optimization}\nContext: {proposal.context}\n\n"
                        f"Kernel:\n```\n{kernel_source}```"),
    ]
    return extract_source(_ask(transport, messages, "lower"))


def update_params(params: PlannerParams, gradient_text: str, transport: Transport) -> PlannerParams:
    """Rewrite the planner prompt following the critique; a failed call leaves it unchanged."""
    messages = [
        message("system", "Revise the planner prompt according to the critique. Reply with the new prompt only."),
        message("user", f"Current prompt:\n{params.theta}\n\nCritique:\n{gradient_text}"),
    ]
    try:
        reply = transport.complete(messages, "update").strip()
    except TransportError as exc:
        log.warning("prompt update failed (%s); keeping version %d", exc, params.version)
        return params
    if not reply:
        log.warning("prompt update returned nothing; keeping version %d", params.version)
        return params
    return PlannerParams(reply, params.version + 1, params.history + (params.theta,))


@dataclass
class BufferEntry:
    state: str  # digest of the source the step started from
    action: Proposal | None
    reward: float


@dataclass
class EpisodeSummary:
    evaluation: str = ""
    gradient: str = ""
    buffer: list = field(default_factory=list)


CONTEXT_TRIPLES = 8


def policy_eval(buffer: list[BufferEntry], transport: Transport) -> str:
    recent = buffer[-CONTEXT_TRIPLES:]
    lines = [json.dumps({"state": b.state, "action": b.action.to_json() if b.action else None,
                         "reward": b.reward}, sort_keys=True) for b in recent]
    messages = [message("system", "Summarize how well the planner's choices worked."),
                message("user", "\n".join(lines))]
    return transport.complete(messages, "evaluate")


def analyze(evaluation: str, params: PlannerParams, transport: Transport) -> str:
    messages = [message("system", "Explain how the planner prompt should change to do better."),
                message("user", f"Prompt:\n{params.theta}\n\nEvaluation:\n{evaluation}")]
    return transport.complete(messages, "analyze")
