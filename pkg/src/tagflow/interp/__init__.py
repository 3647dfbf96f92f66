"""Reference interpreter, dynamic tag tracking and tensor I/O."""

from __future__ import annotations

from .machine import (
    DEFAULT_COST_WEIGHTS, CostCounters, DynamicTagLog, InterpError, LogRecord, RunResult, run,
    run_with_dynamic_tags,
)
from .tensorio import TensorIOError, TensorValue, read_manifest, write_manifest

__all__ = [
    "CostCounters",
    "DEFAULT_COST_WEIGHTS",
    "DynamicTagLog",
    "InterpError",
    "LogRecord",
    "RunResult",
    "TensorIOError",
    "TensorValue",
    "read_manifest",
    "run",
    "run_with_dynamic_tags",
    "write_manifest",
]
