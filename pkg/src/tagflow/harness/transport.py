"""Chat transports: an ordered list of role-tagged messages in, one reply out.

Every request names its purpose (``plan``, ``lower``, ``evaluate``,
``analyze`` or ``update``) so that a scripted transport can replay canned
replies per purpose.

Script file format (JSON)::

    {"plan": ["<reply>", {"file": "reply.md"}, ...], "lower": [...], ...}

Replies for a purpose are used in order; once exhausted the last one
repeats.  ``{"file": ...}`` entries are read relative to the script file,
``{"code": ...}`` entries are read the same way and wrapped in a fenced code
block, and ``{"error": "..."}`` entries simulate a transport failure.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import httpx

PURPOSES = ("plan", "lower", "evaluate", "analyze", "update")
ENDPOINT_ENV = "TAGFLOW_CHAT_ENDPOINT"


class TransportError(RuntimeError):
    pass


class Transport(Protocol):
    def complete(self, messages: list[dict], purpose: str) -> str: ...


def message(role: str, content: str) -> dict:
    return {"role": role, "content": content}


@dataclass
class ScriptedTransport:
    replies: dict  # purpose -> list of reply strings or {"error": msg}
    requests: list = field(default_factory=list)  # (purpose, messages) as received
    _cursor: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedTransport":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise TransportError(f"cannot read transport script {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise TransportError(f"transport script {path} is not JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise TransportError(f"transport script {path} must be a JSON object")
        replies = {}
        for purpose, items in doc.items():
            if purpose not in PURPOSES:
                raise TransportError(f"transport script {path}: unknown purpose '{purpose}'")
            if not isinstance(items, list) or not items:
                raise TransportError(f"transport script {path}: '{purpose}' needs a non-empty list")
            resolved = []
            for item in items:
                if isinstance(item, dict) and ("file" in item or "code" in item):
                    try:
                        text = (path.parent / item.get("file", item.get("code"))).read_text()
                    except OSError as exc:
                        raise TransportError(f"transport script {path}: {exc}") from None
                    resolved.append(f"```\n{text}```\n" if "code" in item else text)
                elif isinstance(item, str) or (isinstance(item, dict) and "error" in item):
                    resolved.append(item)
                else:
                    raise TransportError(f"transport script {path}: bad reply entry {item!r}")
            replies[purpose] = resolved
        return cls(replies)

    def complete(self, messages: list[dict], purpose: str) -> str:
        self.requests.append((purpose, [dict(m) for m in messages]))
        items = self.replies.get(purpose)
        if not items:
            raise TransportError(f"no scripted reply for '{purpose}'")
        k = self._cursor.get(purpose, 0)
        self._cursor[purpose] = k + 1
        item = items[min(k, len(items) - 1)]
        if isinstance(item, dict):
            raise TransportError(str(item["error"]))
        return item


@dataclass
class HttpTransport:
    """Client for a JSON chat endpoint.

    Request body: ``{"model": ..., "messages": [{"role", "content"}, ...]}``.
    The reply may be ``{"choices": [{"message": {"content": ...}}]}`` or
    ``{"content": ...}``.
    """

    url: str | None = None
    model: str = "default"
    timeout: float = 120.0
    headers: dict = field(default_factory=dict)

    def complete(self, messages: list[dict], purpose: str) -> str:
        url = self.url or os.environ.get(ENDPOINT_ENV)
        if not url:
            raise TransportError(f"no chat endpoint configured (set {ENDPOINT_ENV})")
        body = {"model": self.model, "messages": messages, "metadata": {"purpose": purpose}}
        try:
            resp = httpx.post(url, json=body, headers=self.headers, timeout=self.timeout)
            resp.raise_for_status()
            doc = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise TransportError(f"chat request failed: {exc}") from None
        try:
            if "choices" in doc:
                return str(doc["choices"][0]["message"]["content"])
            return str(doc["content"])
        except (KeyError, IndexError, TypeError):
            raise TransportError("chat reply has no message content") from None


def open_transport(spec: str) -> Transport:
    """A URL gives an HTTP transport; anything else is a script file path."""
    if spec.startswith(("http://", "https://")):
        return HttpTransport(spec)
    return ScriptedTransport.from_file(spec)
