"""The in-context reinforcement learning loop.

Each episode starts from the task's baseline kernel and takes ``steps``
plan / select / lower / validate steps.  A step moves the state to its
candidate only when the candidate passed every check and test; otherwise the
next step plans from the same state again.  After each episode the buffer of
(state, action, reward) triples is summarized, critiqued and used to rewrite
the planner prompt.

The trajectory log is line-delimited JSON with one ``start`` record, one
``step`` record per step and one ``episode`` record per episode.  It holds
no timestamps, so a scripted transport and a fixed seed replay it byte for
byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kb import KbEntry
from .planner import (
    BufferEntry, EpisodeSummary, ExtractionError, PlanError, PlannerParams, analyze, lower_plan, plan,
    policy_eval, select, update_params,
)
from .transport import Transport, TransportError
from .validate import Feedback, Task, TaskError, reward, validate

log = logging.getLogger("tagflow.harness")


def digest(source: str) -> str:
    return hashlib.sha256(source.encode()).hexdigest()[:16]


@dataclass
class StepRecord:
    episode: int
    step: int
    theta_version: int
    state: str
    proposals: list
    action: dict | None
    candidate: str | None  # digest of the candidate source
    stage: str | None
    violations: int
    cost: float | None
    reward: float
    best_reward: float | None
    error: str | None = None

    def to_json(self) -> dict:
        return {"type": "step", **self.__dict__}


@dataclass
class Trajectory:
    baseline_cost: float
    steps: list = field(default_factory=list)  # StepRecord
    episodes: list = field(default_factory=list)  # EpisodeSummary

    def best_so_far(self) -> list:
        return [s.best_reward for s in self.steps]


@dataclass
class IcrlResult:
    best_source: str | None
    best_reward: float | None
    best_feedback: Feedback | None
    params: PlannerParams
    trajectory: Trajectory
    log_lines: list

    @property
    def found(self) -> bool:
        return self.best_source is not None


def run_icrl(task: Task, kb: list[KbEntry], transport: Transport, *, episodes: int = 3, steps: int = 2,
             seed: int = 0, temperature: float = 1.0, params: PlannerParams | None = None,
             log_path: str | Path | None = None) -> IcrlResult:
    if episodes < 1 or steps < 1:
        raise ValueError("episodes and steps must be at least 1")
    base = validate(task.source, task)
    if not base.passed:
        raise TaskError(f"baseline kernel of task '{task.name}' does not validate: {base.summary()}")
    rng = np.random.default_rng(seed)
    params = params or PlannerParams()
    traj = Trajectory(base.cost)
    lines = [json.dumps({"type": "start", "task": task.name, "baseline": digest(task.source),
                         "baseline_cost": base.cost, "episodes": episodes, "steps": steps, "seed": seed,
                         "temperature": temperature, "theta_version": params.version}, sort_keys=True)]
    best: tuple | None = None  # (reward, source, feedback)

    for k in range(episodes):
        state = task.source
        buffer: list[BufferEntry] = []
        for t in range(steps):
            rec = StepRecord(k, t, params.version, digest(state), [], None, None, None, 0, None, 0.0, None)
            proposal = None
            try:
                proposals = plan(state, kb, params, transport)
                rec.proposals = [p.to_json() for p in proposals]
                if not proposals:
                    rec.error = "planner produced no proposals"
                else:
                    proposal = select(proposals, temperature, rng)
                    rec.action = proposal.to_json()
                    candidate = lower_plan(state, proposal, kb, transport)
                    rec.candidate = digest(candidate)
                    fb = validate(candidate, task)
                    r = reward(fb, traj, task.reward)
                    if not math.isfinite(r):
                        raise ValueError(f"non-finite reward {r}")
                    rec.stage, rec.violations, rec.cost, rec.reward = fb.stage, fb.violations, fb.cost, r
                    if not fb.passed:
                        rec.error = fb.summary()
                    else:
                        if best is None or r > best[0]:
                            best = (r, candidate, fb)
                        state = candidate
            except (TransportError, PlanError, ExtractionError, ValueError) as exc:
                rec.error = f"{type(exc).__name__}: {exc}"
                log.warning("episode %d step %d: %s", k, t, rec.error)
            rec.best_reward = best[0] if best else None
            buffer.append(BufferEntry(rec.state, proposal, rec.reward))
            traj.steps.append(rec)
            lines.append(json.dumps(rec.to_json(), sort_keys=True))

        summary = EpisodeSummary(buffer=list(buffer))
        try:
            summary.evaluation = policy_eval(buffer, transport)
            summary.gradient = analyze(summary.evaluation, params, transport)
        except TransportError as exc:
            log.warning("episode %d: policy evaluation failed (%s); prompt kept", k, exc)
        if summary.gradient:
            params = update_params(params, summary.gradient, transport)
        traj.episodes.append(summary)
        lines.append(json.dumps({"type": "episode", "episode": k, "evaluation": summary.evaluation,
                                 "gradient": summary.gradient, "theta_version": params.version,
                                 "theta": params.theta}, sort_keys=True))

    if log_path is not None:
        Path(log_path).write_text("\n".join(lines) + "\n")
    if best is None:
        return IcrlResult(None, None, None, params, traj, lines)
    return IcrlResult(best[1], best[0], best[2], params, traj, lines)
