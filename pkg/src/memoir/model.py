"""Core domain types shared by every other module.

All records here are immutable values: once constructed they can be shared
freely across threads. Each type has a canonical JSON form (snake_case keys,
ISO-8601 timestamps) used both on the wire and in the store logs.
"""

from __future__ import annotations

import itertools
import threading
import uuid
from dataclasses import dataclass, fields, replace
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Any, Callable, Iterator

FORMAT_VERSION = 1

# Separator used when an episode's title and narrative are joined into the
# single text that gets embedded. Fixed so that embeddings are reproducible.
TITLE_BODY_SEPARATOR = "\n"


class ModelError(ValueError):
    """Raised when a domain invariant is violated at construction time."""


class ConfigError(ModelError):
    """Raised by validate_config; the message names the offending field."""


class Role(str, Enum):
    USER = "user"
    ASSISTANT = "assistant"


def parse_timestamp(value: str | datetime) -> datetime:
    """Parse an ISO-8601 timestamp (offset or 'Z' suffix) into aware UTC."""
    if isinstance(value, datetime):
        dt = value
    else:
        try:
            dt = datetime.fromisoformat(str(value).replace("Z", "+00:00"))
        except ValueError as exc:
            raise ModelError(f"unparseable timestamp: {value!r}") from exc
    if dt.tzinfo is None:
        # Naive timestamps are taken to be UTC already.
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    """Canonical wire form: ISO-8601 in UTC with an explicit +00:00 offset."""
    return dt.astimezone(timezone.utc).isoformat()


def episode_text(title: str, narrative: str) -> str:
    """The text an episode is embedded under: title, newline, narrative."""
    return f"{title}{TITLE_BODY_SEPARATOR}{narrative}"


@dataclass(frozen=True)
class Message:
    """One conversational turn."""

    role: Role
    content: str
    timestamp: datetime

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", Role(self.role))
        if not self.content or not self.content.strip():
            raise ModelError("message content must be non-empty")
        object.__setattr__(self, "timestamp", parse_timestamp(self.timestamp))

    def to_json(self) -> dict[str, Any]:
        return {
            "role": self.role.value,
            "content": self.content,
            "timestamp": format_timestamp(self.timestamp),
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> Message:
        return cls(
            role=Role(data["role"]),
            content=data["content"],
            timestamp=parse_timestamp(data["timestamp"]),
        )


@dataclass(frozen=True)
class MessageBuffer:
    """Per-user accumulation buffer awaiting a segmentation trigger.

    Immutable: appending returns a new buffer. Messages stay in
    non-decreasing timestamp order; the segmenter guarantees the buffer is
    flushed before it would ever exceed the configured capacity.
    """

    user_id: str
    messages: tuple[Message, ...] = ()
    created_at: datetime | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        for earlier, later in zip(self.messages, self.messages[1:]):
            if later.timestamp < earlier.timestamp:
                raise ModelError("buffer messages must be in non-decreasing timestamp order")

    def with_message(self, msg: Message) -> MessageBuffer:
        if self.messages and msg.timestamp < self.messages[-1].timestamp:
            raise ModelError(
                f"message timestamp {format_timestamp(msg.timestamp)} precedes buffer tail"
            )
        return replace(self, messages=self.messages + (msg,))

    def __len__(self) -> int:
        return len(self.messages)

    def to_json(self) -> dict[str, Any]:
        return {
            "user_id": self.user_id,
            "messages": [m.to_json() for m in self.messages],
            "created_at": format_timestamp(self.created_at) if self.created_at else None,
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> MessageBuffer:
        created = data.get("created_at")
        return cls(
            user_id=data["user_id"],
            messages=tuple(Message.from_json(m) for m in data["messages"]),
            created_at=parse_timestamp(created) if created else None,
        )


@dataclass(frozen=True)
class BoundaryDecision:
    """Detector verdict: boolean boundary flag plus confidence in [0, 1].

    ``clamped`` marks confidences the provider returned out of range;
    ``degraded`` marks decisions synthesized after a parse failure.
    """

    is_boundary: bool
    confidence: float
    clamped: bool = False
    degraded: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ModelError("boundary confidence must lie in [0, 1]")

    @classmethod
    def from_raw(cls, is_boundary: bool, confidence: float) -> BoundaryDecision:
        """Build from provider output, clamping and flagging bad confidences."""
        clamped = confidence < 0.0 or confidence > 1.0
        return cls(
            is_boundary=bool(is_boundary),
            confidence=min(1.0, max(0.0, float(confidence))),
            clamped=clamped,
        )

    @classmethod
    def none(cls) -> BoundaryDecision:
        """The neutral decision: no boundary, zero confidence."""
        return cls(is_boundary=False, confidence=0.0)

    def to_json(self) -> dict[str, Any]:
        return {
            "is_boundary": self.is_boundary,
            "confidence": self.confidence,
            "clamped": self.clamped,
            "degraded": self.degraded,
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> BoundaryDecision:
        return cls(
            is_boundary=data["is_boundary"],
            confidence=data["confidence"],
            clamped=data.get("clamped", False),
            degraded=data.get("degraded", False),
        )


@dataclass(frozen=True)
class Episode:
    """A segmented experience: title, third-person narrative, and its sources.

    The raw source messages are kept verbatim so that query-time contexts can
    include original transcripts and the learning cycle can calibrate against
    the unprocessed conversation.
    """

    id: str
    user_id: str
    title: str
    narrative: str
    source_messages: tuple[Message, ...]
    embedding: tuple[float, ...]
    time_span: tuple[datetime, datetime]
    created_at: datetime

    def __post_init__(self) -> None:
        if not self.title.strip():
            raise ModelError("episode title must be non-empty")
        if not self.narrative.strip():
            raise ModelError("episode narrative must be non-empty")
        msgs = tuple(self.source_messages)
        if not msgs:
            raise ModelError("episode must carry at least one source message")
        object.__setattr__(self, "source_messages", msgs)
        object.__setattr__(self, "embedding", tuple(float(x) for x in self.embedding))
        object.__setattr__(self, "time_span", (msgs[0].timestamp, msgs[-1].timestamp))
        object.__setattr__(self, "created_at", parse_timestamp(self.created_at))

    @property
    def embed_text(self) -> str:
        return episode_text(self.title, self.narrative)

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "user_id": self.user_id,
            "title": self.title,
            "narrative": self.narrative,
            "source_messages": [m.to_json() for m in self.source_messages],
            "embedding": list(self.embedding),
            "time_span": [format_timestamp(t) for t in self.time_span],
            "created_at": format_timestamp(self.created_at),
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> Episode:
        msgs = tuple(Message.from_json(m) for m in data["source_messages"])
        return cls(
            id=data["id"],
            user_id=data["user_id"],
            title=data["title"],
            narrative=data["narrative"],
            source_messages=msgs,
            embedding=tuple(data["embedding"]),
            time_span=(msgs[0].timestamp, msgs[-1].timestamp),
            created_at=parse_timestamp(data["created_at"]),
        )


@dataclass(frozen=True)
class SemanticFact:
    """One distilled knowledge statement with provenance."""

    id: str
    user_id: str
    statement: str
    embedding: tuple[float, ...]
    source_episode_id: str
    created_at: datetime

    def __post_init__(self) -> None:
        if not self.statement.strip():
            raise ModelError("fact statement must be non-empty")
        object.__setattr__(self, "embedding", tuple(float(x) for x in self.embedding))
        object.__setattr__(self, "created_at", parse_timestamp(self.created_at))

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "user_id": self.user_id,
            "statement": self.statement,
            "embedding": list(self.embedding),
            "source_episode_id": self.source_episode_id,
            "created_at": format_timestamp(self.created_at),
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> SemanticFact:
        return cls(
            id=data["id"],
            user_id=data["user_id"],
            statement=data["statement"],
            embedding=tuple(data["embedding"]),
            source_episode_id=data["source_episode_id"],
            created_at=parse_timestamp(data["created_at"]),
        )


@dataclass(frozen=True)
class EngineConfig:
    """Engine hyperparameters.

    Defaults follow the reference operating point: boundary confidence 0.7,
    buffer capacity 25, similarity threshold 0.0, top-10 episodes with twice
    as many facts, raw transcripts attached to the top 2 episodes, and a
    limit of 20 facts retrieved as context for each learning cycle.
    """

    boundary_confidence_threshold: float = 0.7
    max_buffer_size: int = 25
    similarity_threshold: float = 0.0
    top_k_episodes: int = 10
    semantic_multiplier: int = 2
    raw_text_episode_count: int = 2
    semantic_retrieval_limit_for_learning: int = 20

    @property
    def top_m_facts(self) -> int:
        return self.semantic_multiplier * self.top_k_episodes

    def with_top_k(self, k: int) -> EngineConfig:
        """Derive a per-query config for a caller-supplied k.

        The fact limit scales as multiplier * k and the raw-transcript count
        is clamped so the raw_text <= k invariant keeps holding.
        """
        derived = replace(
            self,
            top_k_episodes=k,
            raw_text_episode_count=min(self.raw_text_episode_count, k),
        )
        return validate_config(derived)

    def to_json(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> EngineConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        return cls(**data)


def validate_config(cfg: EngineConfig) -> EngineConfig:
    """Return cfg unchanged if every invariant holds, else raise ConfigError."""
    if not 0.0 <= cfg.boundary_confidence_threshold <= 1.0:
        raise ConfigError("boundary_confidence_threshold out of range [0, 1]")
    if not -1.0 <= cfg.similarity_threshold <= 1.0:
        raise ConfigError("similarity_threshold out of range [-1, 1]")
    if cfg.max_buffer_size < 1:
        raise ConfigError("max_buffer_size must be a positive integer")
    if cfg.top_k_episodes < 1:
        raise ConfigError("top_k_episodes must be a positive integer")
    if cfg.semantic_multiplier < 1:
        raise ConfigError("semantic_multiplier must be a positive integer")
    if cfg.raw_text_episode_count < 0:
        raise ConfigError("raw_text_episode_count must be non-negative")
    if cfg.raw_text_episode_count > cfg.top_k_episodes:
        raise ConfigError("raw_text_episode_count must not exceed top_k_episodes")
    if cfg.semantic_retrieval_limit_for_learning < 1:
        raise ConfigError("semantic_retrieval_limit_for_learning must be a positive integer")
    return cfg


class IdGenerator:
    """Opaque string ids, unique within one store partition.

    Deterministic mode yields a monotonic per-prefix sequence ("ep-000001",
    "ep-000002", ...) so scripted runs replay bit-identically; live mode
    yields collision-resistant random ids.
    """

    def __init__(self, deterministic: bool = False):
        self.deterministic = deterministic
        self._counters: dict[str, Iterator[int]] = {}
        self._lock = threading.Lock()

    def new_id(self, prefix: str = "ep") -> str:
        if not self.deterministic:
            return f"{prefix}-{uuid.uuid4().hex}"
        with self._lock:
            counter = self._counters.setdefault(prefix, itertools.count(1))
            return f"{prefix}-{next(counter):06d}"

    def observe(self, existing_id: str) -> None:
        """Advance a deterministic counter past an id restored from disk."""
        if not self.deterministic:
            return
        prefix, _, tail = existing_id.rpartition("-")
        if not prefix or not tail.isdigit():
            return
        seen = int(tail)
        with self._lock:
            counter = self._counters.get(prefix)
            current = next(counter) - 1 if counter is not None else 0
            self._counters[prefix] = itertools.count(max(current, seen) + 1)


Clock = Callable[[], datetime]


def system_clock() -> datetime:
    return datetime.now(timezone.utc)


class TickClock:
    """Deterministic clock: a fixed start advanced by a fixed step per call.

    Used under scripted providers so created_at stamps (and therefore store
    files and retrieval tie-breaks) are identical across replay runs.
    """

    DEFAULT_START = datetime(2000, 1, 1, tzinfo=timezone.utc)

    def __init__(self, start: datetime | None = None, step: timedelta = timedelta(seconds=1)):
        self._next = start or self.DEFAULT_START
        self._step = step
        self._lock = threading.Lock()

    def __call__(self) -> datetime:
        with self._lock:
            now = self._next
            self._next = now + self._step
            return now

    def advance_past(self, dt: datetime) -> None:
        with self._lock:
            if dt >= self._next:
                self._next = dt + self._step
