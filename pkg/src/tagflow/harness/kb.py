"""Knowledge base of optimization skills.

Each entry is one ``*.md`` file::

    ---
    name: vectorized-loads
    category: local-source
    params: {"tile": "ra", "width": "4"}
    ---
    === description ===
    prose ...
    === pattern ===
    DSL snippet showing the rewrite ...
    === invariants ===
    tag and assert statements; ${name} placeholders take values from params

The invariant template must parse as DSL statements once the default
parameters are substituted.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from string import Template

from ..dsl.lexer import DslSyntaxError
from ..dsl.parser import parse_statements

CATEGORIES = ("global-intrusive", "local-source", "isa-specific")
_SECTION = re.compile(r"^===\s*(\w[\w-]*)\s*===\s*$", re.M)


class KbError(ValueError):
    pass


@dataclass(frozen=True)
class KbEntry:
    name: str
    category: str
    description: str
    pattern: str
    invariant_template: str
    params: dict = field(default_factory=dict)

    def invariants(self, **overrides) -> str:
        """The invariant template with parameters substituted."""
        return Template(self.invariant_template).substitute({**self.params, **overrides})

    def summary(self) -> str:
        first = self.description.strip().split("\n\n")[0].replace("\n", " ")
        return f"{self.name} [{self.category}]: {first}"


def parse_entry(text: str, origin: str = "<entry>") -> KbEntry:
    m = re.match(r"\A---\n(.*?)\n---\n(.*)\Z", text, re.S)
    if not m:
        raise KbError(f"{origin}: missing '---' front matter")
    header: dict = {}
    for line in m.group(1).splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise KbError(f"{origin}: malformed header line {line!r}")
        header[key.strip()] = value.strip()
    name = header.get("name")
    if not name:
        raise KbError(f"{origin}: entry has no name")
    category = header.get("category")
    if category not in CATEGORIES:
        raise KbError(f"entry '{name}': category {category!r} is not one of {', '.join(CATEGORIES)}")
    try:
        params = json.loads(header.get("params", "{}"))
    except json.JSONDecodeError as exc:
        raise KbError(f"entry '{name}': params are not a JSON object ({exc})") from None
    if not isinstance(params, dict):
        raise KbError(f"entry '{name}': params are not a JSON object")
    params = {str(k): str(v) for k, v in params.items()}
    body = m.group(2)
    marks = list(_SECTION.finditer(body))
    sections = {}
    for i, mk in enumerate(marks):
        end = marks[i + 1].start() if i + 1 < len(marks) else len(body)
        sections[mk.group(1)] = body[mk.end():end].strip("\n")
    for required in ("description", "pattern", "invariants"):
        if required not in sections:
            raise KbError(f"entry '{name}': missing '=== {required} ===' section")
    entry = KbEntry(name, category, sections["description"].strip(), sections["pattern"],
                    sections["invariants"], params)
    try:
        parse_statements(entry.invariants())
    except KeyError as exc:
        raise KbError(f"entry '{name}': template parameter {exc} has no default") from None
    except DslSyntaxError as exc:
        raise KbError(f"entry '{name}': invariant template does not parse: {exc}") from None
    return entry


def load_knowledge_base(path: str | Path | None = None) -> list[KbEntry]:
    """Load every entry in a directory (the shipped KB when ``path`` is None), sorted by name."""
    if path is None:
        root = resources.files("tagflow.data").joinpath("kb")
        files = sorted((f.name, f.read_text()) for f in root.iterdir() if f.name.endswith(".md"))
    else:
        root = Path(path)
        if not root.is_dir():
            raise KbError(f"knowledge base directory {root} does not exist")
        files = sorted((f.name, f.read_text()) for f in root.glob("*.md"))
    entries: dict[str, KbEntry] = {}
    for fname, text in files:
        e = parse_entry(text, fname)
        if e.name in entries:
            raise KbError(f"duplicate knowledge base entry '{e.name}' ({fname})")
        entries[e.name] = e
    return sorted(entries.values(), key=lambda e: e.name)
