"""Optimization harness: knowledge base, planner, validation, reward and the learning loop."""

from __future__ import annotations

from .icrl import IcrlResult, StepRecord, Trajectory, run_icrl
from .kb import CATEGORIES, KbEntry, KbError, load_knowledge_base, parse_entry
from .planner import (
    DEFAULT_THETA, ExtractionError, PlanError, PlannerParams, Proposal, extract_source, lower_plan,
    parse_proposals, plan, select, softmax_probabilities, update_params,
)
from .references import REFERENCES
from .transport import HttpTransport, ScriptedTransport, Transport, TransportError, open_transport
from .validate import Feedback, RewardWeights, Task, TaskError, UnitTest, make_inputs, reward, validate

__all__ = [
    "CATEGORIES",
    "DEFAULT_THETA",
    "ExtractionError",
    "Feedback",
    "HttpTransport",
    "IcrlResult",
    "KbEntry",
    "KbError",
    "PlanError",
    "PlannerParams",
    "Proposal",
    "REFERENCES",
    "RewardWeights",
    "ScriptedTransport",
    "StepRecord",
    "Task",
    "TaskError",
    "Trajectory",
    "Transport",
    "TransportError",
    "UnitTest",
    "extract_source",
    "load_knowledge_base",
    "lower_plan",
    "make_inputs",
    "open_transport",
    "parse_entry",
    "parse_proposals",
    "plan",
    "reward",
    "run_icrl",
    "select",
    "softmax_probabilities",
    "update_params",
    "validate",
]
