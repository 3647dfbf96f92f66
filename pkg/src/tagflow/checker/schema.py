"""JSON schema of check reports."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema


@lru_cache(maxsize=1)
def report_schema() -> dict:
    return json.loads(resources.files("tagflow.data").joinpath("report.schema.json").read_text())


def validate_report(doc: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``doc`` is not a well-formed report."""
    jsonschema.validate(doc, report_schema())
