"""Deterministic scripted backend for tests and replays.

A script is an ordered list of rules. Each chat call walks the rules in
declaration order and the first live match wins; matched fault rules are
consumed so a retry can fall through to the next rule. Embeddings are
hash-derived unit vectors, so identical texts embed identically and the
whole engine becomes bit-deterministic under this backend.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .base import ChatRequest, RoleTag, ScriptError, TransportError

FAILURE_MODES = ("timeout", "malformed", "transport_error")

_MALFORMED_DEFAULT = "}{ this is deliberately not parseable JSON"


@dataclass
class ScriptedRule:
    """One canned response (or injected fault) for a role.

    Matching: role must equal; ``contains`` (if set) must be a substring of
    the user prompt; ``call_index`` (if set) must equal the 0-based per-role
    call counter. Rules with a fault or a call_index are one-shot unless
    ``once`` says otherwise.
    """

    role_tag: RoleTag
    response: str = ""
    contains: str | None = None
    call_index: int | None = None
    failure_mode: str | None = None
    once: bool | None = None

    def __post_init__(self) -> None:
        self.role_tag = RoleTag(self.role_tag)
        if self.failure_mode is not None and self.failure_mode not in FAILURE_MODES:
            raise ValueError(f"unknown failure_mode: {self.failure_mode!r}")
        if self.once is None:
            self.once = self.failure_mode is not None or self.call_index is not None
        self.uses = 0

    def matches(self, request: ChatRequest, call_index: int) -> bool:
        if self.once and self.uses > 0:
            return False
        if self.role_tag != request.role_tag:
            return False
        if self.contains is not None and self.contains not in request.user_prompt:
            return False
        if self.call_index is not None and self.call_index != call_index:
            return False
        return True


def _coerce_response(value: Any) -> str:
    """Script files may give responses as JSON values; serialize those."""
    if isinstance(value, str):
        return value
    return json.dumps(value)


def hashed_unit_vector(text: str, dim: int) -> list[float]:
    """Deterministic pseudo-embedding: unit vector derived from sha256(text)."""
    values: list[float] = []
    block = 0
    while len(values) < dim:
        digest = hashlib.sha256(f"{block}:{text}".encode()).digest()
        for i in range(0, len(digest) - 7, 8):
            word = int.from_bytes(digest[i : i + 8], "little")
            values.append(word / 2**63 - 1.0)  # uniform-ish in [-1, 1)
        block += 1
    vec = np.asarray(values[:dim], dtype=np.float64)
    norm = float(np.linalg.norm(vec))
    if norm < 1e-12:  # astronomically unlikely; keep the contract anyway
        vec[0] = 1.0
        norm = 1.0
    vec /= norm
    return [float(x) for x in vec]


class ScriptedBackend:
    """Rule-driven stand-in for a chat+embedding provider.

    In strict mode an unmatched chat call raises ScriptError naming the role
    and prompt digest; otherwise the role's configured default response (or
    the empty string) is returned, which call sites treat as a parse failure.
    """

    deterministic = True

    def __init__(
        self,
        rules: list[ScriptedRule] | None = None,
        defaults: dict[RoleTag, str] | None = None,
        strict: bool = True,
        embedding_dimension: int = 8,
        hang_seconds: float = 30.0,
    ):
        self.rules = list(rules or [])
        self.defaults = {RoleTag(k): _coerce_response(v) for k, v in (defaults or {}).items()}
        self.strict = strict
        self._dim = embedding_dimension
        self.hang_seconds = hang_seconds
        self._calls_per_role: dict[RoleTag, int] = {}
        self._lock = threading.Lock()

    @property
    def embedding_dimension(self) -> int:
        return self._dim

    def chat(self, request: ChatRequest) -> str:
        with self._lock:
            index = self._calls_per_role.get(request.role_tag, 0)
            self._calls_per_role[request.role_tag] = index + 1
            rule = next((r for r in self.rules if r.matches(request, index)), None)
            if rule is not None:
                rule.uses += 1
        if rule is None:
            if request.role_tag in self.defaults:
                return self.defaults[request.role_tag]
            if self.strict:
                raise ScriptError(
                    f"no scripted rule for role={request.role_tag.value} "
                    f"prompt_digest={request.prompt_digest}"
                )
            return ""
        if rule.failure_mode == "transport_error":
            raise TransportError(f"scripted transport fault for {request.role_tag.value}")
        if rule.failure_mode == "timeout":
            # Simulates a hung provider: hold the call, then fail it.
            time.sleep(self.hang_seconds)
            raise TransportError(f"scripted timeout for {request.role_tag.value}")
        if rule.failure_mode == "malformed":
            return rule.response or _MALFORMED_DEFAULT
        return rule.response

    def embed(self, text: str) -> list[float]:
        if not text:
            raise ValueError("cannot embed empty text")
        return hashed_unit_vector(text, self._dim)


def load_script(path: str | Path) -> ScriptedBackend:
    """Load a ScriptedBackend from a declarative JSON script file.

    Layout::

        {
          "strict": true,
          "embedding_dimension": 8,
          "defaults": {"boundary_detector": {"is_boundary": false, "confidence": 0.0}},
          "rules": [
            {"role": "boundary_detector", "contains": "by the way",
             "response": {"is_boundary": true, "confidence": 0.9}},
            ...
          ]
        }
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    rules = [
        ScriptedRule(
            role_tag=RoleTag(entry["role"]),
            response=_coerce_response(entry.get("response", "")),
            contains=entry.get("contains"),
            call_index=entry.get("call_index"),
            failure_mode=entry.get("failure_mode"),
            once=entry.get("once"),
        )
        for entry in data.get("rules", [])
    ]
    return ScriptedBackend(
        rules=rules,
        defaults={RoleTag(k): v for k, v in data.get("defaults", {}).items()},
        strict=data.get("strict", True),
        embedding_dimension=data.get("embedding_dimension", 8),
        hang_seconds=data.get("hang_seconds", 30.0),
    )
