"""Transcript files: the normalized on-disk form of a conversation.

A transcript is one conversation (treated as one memory owner) split into
chronologically ordered sessions of role/content/timestamp messages::

    {
      "conversation_id": "locomo-01",
      "sessions": [
        {"session_id": "s1",
         "messages": [{"role": "user", "content": "...",
                       "timestamp": "2023-06-15T09:00:00Z"}, ...]},
        ...
      ]
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .model import Message, ModelError, Role


class TranscriptError(ValueError):
    pass


@dataclass(frozen=True)
class TranscriptSession:
    session_id: str
    messages: tuple[Message, ...]


@dataclass(frozen=True)
class Transcript:
    conversation_id: str
    sessions: tuple[TranscriptSession, ...]

    @property
    def message_count(self) -> int:
        return sum(len(s.messages) for s in self.sessions)

    def full_text(self) -> str:
        """Every message body, newline-joined; used for token accounting."""
        return "\n".join(m.content for s in self.sessions for m in s.messages)


def parse_transcript(data: dict) -> Transcript:
    if not isinstance(data, dict) or "conversation_id" not in data:
        raise TranscriptError("transcript must be an object with a conversation_id")
    sessions: list[TranscriptSession] = []
    previous_end = None
    for index, raw_session in enumerate(data.get("sessions", [])):
        session_id = str(raw_session.get("session_id") or f"session-{index + 1}")
        messages: list[Message] = []
        for raw_msg in raw_session.get("messages", []):
            try:
                msg = Message(
                    role=Role(raw_msg["role"]),
                    content=raw_msg["content"],
                    timestamp=raw_msg["timestamp"],
                )
            except (KeyError, ValueError, ModelError) as exc:
                raise TranscriptError(f"session {session_id}: bad message: {exc}") from exc
            if messages and msg.timestamp < messages[-1].timestamp:
                raise TranscriptError(f"session {session_id}: messages out of timestamp order")
            messages.append(msg)
        if messages:
            if previous_end is not None and messages[0].timestamp < previous_end:
                raise TranscriptError(f"session {session_id}: sessions out of chronological order")
            previous_end = messages[-1].timestamp
        sessions.append(TranscriptSession(session_id=session_id, messages=tuple(messages)))
    return Transcript(conversation_id=str(data["conversation_id"]), sessions=tuple(sessions))


def load_transcript(path: str | Path) -> Transcript:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TranscriptError(f"{path}: not valid JSON: {exc}") from exc
    return parse_transcript(data)
