"""Gateway core: request/response types, retries, call logging, JSON extraction."""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Any, Protocol

logger = logging.getLogger(__name__)


class GatewayError(Exception):
    """Base class for provider failures."""


class TransportError(GatewayError):
    """Retriable failure reaching the provider (network, timeout, 5xx)."""


class ScriptError(GatewayError):
    """Strict scripted mode received a call no rule matches."""


class ParseError(GatewayError):
    """Provider output could not be parsed into the expected shape."""


class RoleTag(str, Enum):
    BOUNDARY_DETECTOR = "boundary_detector"
    EPISODE_GENERATOR = "episode_generator"
    EPISODE_PREDICTOR = "episode_predictor"
    KNOWLEDGE_DISTILLER = "knowledge_distiller"
    ANSWERER = "answerer"
    JUDGE = "judge"


class ResponseFormat(str, Enum):
    FREE_TEXT = "free_text"
    JSON_OBJECT = "json_object"
    JSON_ARRAY = "json_array"


@dataclass(frozen=True)
class ChatRequest:
    """One chat call, dispatched by role so backends can vary model/sampling.

    response_format is advisory; call sites enforce shape via balanced-JSON
    extraction on the returned text.
    """

    role_tag: RoleTag
    system_prompt: str
    user_prompt: str
    response_format: ResponseFormat = ResponseFormat.FREE_TEXT

    def __post_init__(self) -> None:
        if not self.system_prompt.strip() or not self.user_prompt.strip():
            raise ValueError("chat prompts must be non-empty")

    @property
    def prompt_digest(self) -> str:
        payload = f"{self.system_prompt}\x00{self.user_prompt}".encode()
        return hashlib.sha256(payload).hexdigest()[:16]


class ChatBackend(Protocol):
    deterministic: bool

    def chat(self, request: ChatRequest) -> str: ...

    def embed(self, text: str) -> list[float]: ...

    @property
    def embedding_dimension(self) -> int | None: ...


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class CallRecord:
    """One outbound provider call, as seen by pipeline-property tests."""

    kind: str  # "chat" | "embed"
    role_tag: RoleTag | None
    prompt_digest: str
    response_digest: str
    ok: bool
    prompt: str | None = None
    response: str | None = None


class CallLog:
    """Thread-safe record of every outbound call.

    When ``capture_text`` is on (the default for scripted backends) the full
    prompt/response text is kept so tests can assert on call contents, not
    just digests.
    """

    def __init__(self, capture_text: bool = False):
        self.capture_text = capture_text
        self._records: list[CallRecord] = []
        self._lock = threading.Lock()

    def record(
        self,
        kind: str,
        role_tag: RoleTag | None,
        prompt: str,
        response: str,
        ok: bool = True,
    ) -> None:
        rec = CallRecord(
            kind=kind,
            role_tag=role_tag,
            prompt_digest=_digest(prompt),
            response_digest=_digest(response),
            ok=ok,
            prompt=prompt if self.capture_text else None,
            response=response if self.capture_text else None,
        )
        with self._lock:
            self._records.append(rec)

    def records(self, kind: str | None = None, role_tag: RoleTag | None = None) -> list[CallRecord]:
        with self._lock:
            records = list(self._records)
        if kind is not None:
            records = [r for r in records if r.kind == kind]
        if role_tag is not None:
            records = [r for r in records if r.role_tag == role_tag]
        return records

    def clear(self) -> None:
        with self._lock:
            self._records.clear()

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


class LLMGateway:
    """Backend wrapper adding retry-with-backoff and call logging.

    Transport errors are retried with exponential backoff (default 3
    attempts); any other failure propagates immediately. Every completed
    call, including the failing final attempt, lands in the call log.
    """

    def __init__(
        self,
        backend: ChatBackend,
        max_attempts: int = 3,
        backoff_base: float | None = None,
        call_log: CallLog | None = None,
    ):
        self.backend = backend
        self.max_attempts = max_attempts
        if backoff_base is None:
            # Scripted replays should not sleep between injected faults.
            backoff_base = 0.0 if backend.deterministic else 0.25
        self.backoff_base = backoff_base
        self.call_log = call_log or CallLog(capture_text=backend.deterministic)

    @property
    def deterministic(self) -> bool:
        return self.backend.deterministic

    @property
    def embedding_dimension(self) -> int | None:
        return self.backend.embedding_dimension

    def chat(self, request: ChatRequest) -> str:
        prompt = f"{request.system_prompt}\n\n{request.user_prompt}"
        last_error: TransportError | None = None
        for attempt in range(self.max_attempts):
            try:
                response = self.backend.chat(request)
            except TransportError as exc:
                last_error = exc
                self.call_log.record("chat", request.role_tag, prompt, f"<error: {exc}>", ok=False)
                if attempt + 1 < self.max_attempts and self.backoff_base > 0:
                    time.sleep(self.backoff_base * (2**attempt))
                continue
            self.call_log.record("chat", request.role_tag, prompt, response)
            return response
        raise TransportError(
            f"{request.role_tag.value}: transport failed after {self.max_attempts} attempts"
        ) from last_error

    def embed(self, text: str) -> list[float]:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        last_error: TransportError | None = None
        for attempt in range(self.max_attempts):
            try:
                vector = self.backend.embed(text)
            except TransportError as exc:
                last_error = exc
                self.call_log.record("embed", None, text, f"<error: {exc}>", ok=False)
                if attempt + 1 < self.max_attempts and self.backoff_base > 0:
                    time.sleep(self.backoff_base * (2**attempt))
                continue
            self.call_log.record("embed", None, text, f"<vector dim={len(vector)}>")
            return vector
        raise TransportError(f"embedding transport failed after {self.max_attempts} attempts") from last_error


def _scan_balanced(text: str, open_ch: str, close_ch: str) -> str | None:
    """Return the first balanced, parseable JSON span delimited by the given pair."""
    start = text.find(open_ch)
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == open_ch:
                depth += 1
            elif ch == close_ch:
                depth -= 1
                if depth == 0:
                    candidate = text[start : i + 1]
                    try:
                        json.loads(candidate)
                    except json.JSONDecodeError:
                        break
                    return candidate
        start = text.find(open_ch, start + 1)
    return None


def extract_json_object(text: str) -> dict[str, Any]:
    """Extract and parse the first balanced JSON object, ignoring any prose."""
    candidate = _scan_balanced(text, "{", "}")
    if candidate is None:
        raise ParseError(f"no JSON object found in response: {text[:120]!r}")
    parsed = json.loads(candidate)
    if not isinstance(parsed, dict):
        raise ParseError("balanced span did not parse to an object")
    return parsed


def extract_json_array(text: str) -> list[Any]:
    """Extract and parse the first balanced JSON array, ignoring any prose."""
    candidate = _scan_balanced(text, "[", "]")
    if candidate is None:
        raise ParseError(f"no JSON array found in response: {text[:120]!r}")
    parsed = json.loads(candidate)
    if not isinstance(parsed, list):
        raise ParseError("balanced span did not parse to an array")
    return parsed
