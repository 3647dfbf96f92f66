"""Unrolled kernel IR: lowering, intrinsic descriptors and memory safety."""

from __future__ import annotations

from .intrinsics import DescriptorError, IntrinsicDescriptor, load_descriptor, parse_descriptor
from .lower import DEFAULT_INSTANCE_CAP, CapExceeded, LoweringError, lower
from .nodes import KernelIr, MemDecl, ProgramPoint
from .safety import MemorySafetyError, validate_memory_safety
from .threads import ThreadSpace

__all__ = [
    "CapExceeded",
    "DEFAULT_INSTANCE_CAP",
    "DescriptorError",
    "IntrinsicDescriptor",
    "KernelIr",
    "LoweringError",
    "MemDecl",
    "MemorySafetyError",
    "ProgramPoint",
    "ThreadSpace",
    "load_descriptor",
    "lower",
    "parse_descriptor",
    "validate_memory_safety",
]
