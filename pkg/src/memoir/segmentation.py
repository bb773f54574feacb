"""Streaming topic segmentation.

Each arriving message is judged by the LLM boundary detector against the
user's buffer; a segment is flushed either on a high-confidence semantic
shift (the buffered messages, with the new message seeding the next buffer)
or on buffer capacity (the buffer including the new message). Capacity wins
when both fire, since it is about space, not topic. Detector parse failures
degrade to "no boundary" so capacity still guarantees eventual segmentation
and the ingest path stays live.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from enum import Enum

from .gateway import ChatRequest, LLMGateway, ParseError, ResponseFormat, RoleTag
from .gateway.base import extract_json_object
from .gateway.prompts import BOUNDARY_DETECTOR_SYSTEM, render_transcript
from .model import BoundaryDecision, EngineConfig, Message, MessageBuffer
from .retrieval import default_token_estimate

logger = logging.getLogger(__name__)

# When the rendered detector context would exceed this budget, only the most
# recent messages are shown verbatim behind a one-line truncation notice.
DETECTOR_TOKEN_BUDGET = 3000
DETECTOR_RECENT_WINDOW = 15


class TriggerCause(str, Enum):
    SEMANTIC_BOUNDARY = "semantic_boundary"
    BUFFER_FULL = "buffer_full"
    SESSION_END = "session_end"
    NONE = "none"


@dataclass(frozen=True)
class SegmentationOutcome:
    triggered: bool
    segment: tuple[Message, ...] | None
    decision: BoundaryDecision
    trigger_cause: TriggerCause

    def __post_init__(self) -> None:
        if self.triggered != bool(self.segment):
            raise ValueError("triggered must match segment presence")
        if (self.trigger_cause == TriggerCause.NONE) != (not self.triggered):
            raise ValueError("trigger_cause none must match triggered=false")

    def to_json(self) -> dict:
        return {
            "triggered": self.triggered,
            "trigger_cause": self.trigger_cause.value,
            "segment_size": len(self.segment) if self.segment else 0,
            "decision": {
                "is_boundary": self.decision.is_boundary,
                "confidence": self.decision.confidence,
            },
        }


def should_trigger(
    decision: BoundaryDecision, buffer_len: int, cfg: EngineConfig
) -> tuple[bool, TriggerCause]:
    """Trigger rule: (boundary and confidence strictly above threshold) or
    (buffer at or over capacity); capacity takes precedence when both hold."""
    if buffer_len < 0:
        raise ValueError("buffer_len must be non-negative")
    if buffer_len >= cfg.max_buffer_size:
        return True, TriggerCause.BUFFER_FULL
    if decision.is_boundary and decision.confidence > cfg.boundary_confidence_threshold:
        return True, TriggerCause.SEMANTIC_BOUNDARY
    return False, TriggerCause.NONE


def _render_detector_context(
    buffer: MessageBuffer,
    new_message: Message,
    token_budget: int,
    recent_window: int,
) -> str:
    transcript = render_transcript(buffer.messages)
    if default_token_estimate(transcript) > token_budget:
        shown = buffer.messages[-recent_window:]
        omitted = len(buffer.messages) - len(shown)
        transcript = (
            f"(… {omitted} earlier message(s) omitted for length …)\n"
            + render_transcript(shown)
        )
    return (
        "Message buffer so far:\n"
        f"{transcript}\n\n"
        "New incoming message:\n"
        f"{render_transcript([new_message])}"
    )


def detect_boundary(
    new_message: Message,
    buffer: MessageBuffer,
    provider: LLMGateway,
    *,
    token_budget: int = DETECTOR_TOKEN_BUDGET,
    recent_window: int = DETECTOR_RECENT_WINDOW,
) -> BoundaryDecision:
    """Ask the detector whether new_message starts a new topic or event.

    An empty buffer short-circuits to (false, 0.0): there is no context to
    diverge from, so no provider call is made. Unparseable output is retried
    once, then degraded to (false, 0.0) with the degraded flag set.
    """
    if len(buffer) == 0:
        return BoundaryDecision.none()
    request = ChatRequest(
        role_tag=RoleTag.BOUNDARY_DETECTOR,
        system_prompt=BOUNDARY_DETECTOR_SYSTEM,
        user_prompt=_render_detector_context(buffer, new_message, token_budget, recent_window),
        response_format=ResponseFormat.JSON_OBJECT,
    )
    for attempt in range(2):
        response = provider.chat(request)
        try:
            payload = extract_json_object(response)
            flag = payload["is_boundary"]
            confidence = payload["confidence"]
            if not isinstance(flag, bool) or isinstance(confidence, bool):
                raise ParseError("is_boundary must be a boolean")
            return BoundaryDecision.from_raw(flag, float(confidence))
        except (ParseError, KeyError, TypeError, ValueError):
            if attempt == 0:
                continue
    logger.warning("boundary detector output unparseable after retry; assuming no boundary")
    return BoundaryDecision(is_boundary=False, confidence=0.0, degraded=True)


class Segmenter:
    """Per-user message buffers plus the trigger logic around them.

    Appends for one user are serialized under that user's lock; distinct
    users proceed concurrently. No message is ever lost or duplicated: every
    appended message ends up in exactly one emitted segment or in the live
    buffer.
    """

    def __init__(
        self,
        provider: LLMGateway,
        cfg: EngineConfig,
        *,
        detector_token_budget: int = DETECTOR_TOKEN_BUDGET,
        detector_recent_window: int = DETECTOR_RECENT_WINDOW,
    ):
        self.provider = provider
        self.cfg = cfg
        self.detector_token_budget = detector_token_budget
        self.detector_recent_window = detector_recent_window
        self._buffers: dict[str, MessageBuffer] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    def _user_lock(self, user_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(user_id, threading.Lock())

    def buffer_snapshot(self, user_id: str) -> tuple[Message, ...]:
        with self._user_lock(user_id):
            buffer = self._buffers.get(user_id)
            return buffer.messages if buffer else ()

    def known_user(self, user_id: str) -> bool:
        with self._registry_lock:
            return user_id in self._buffers

    def append_message(self, user_id: str, msg: Message) -> SegmentationOutcome:
        """Run detection and the trigger rule for one arriving message.

        Buffer length is measured as if msg were already appended, so a
        capacity flush carries msg along while a semantic flush leaves it to
        seed the next buffer. On provider error the buffer is unchanged.
        """
        with self._user_lock(user_id):
            buffer = self._buffers.get(user_id) or MessageBuffer(user_id=user_id)
            decision = detect_boundary(
                msg,
                buffer,
                self.provider,
                token_budget=self.detector_token_budget,
                recent_window=self.detector_recent_window,
            )
            triggered, cause = should_trigger(decision, len(buffer) + 1, self.cfg)
            if not triggered:
                self._buffers[user_id] = buffer.with_message(msg)
                return SegmentationOutcome(False, None, decision, TriggerCause.NONE)
            if cause == TriggerCause.BUFFER_FULL:
                segment = buffer.with_message(msg).messages
                self._buffers[user_id] = MessageBuffer(user_id=user_id)
            else:
                segment = buffer.messages
                self._buffers[user_id] = MessageBuffer(user_id=user_id).with_message(msg)
            return SegmentationOutcome(True, segment, decision, cause)

    def flush_session(self, user_id: str) -> SegmentationOutcome:
        """Emit whatever is buffered as a session_end segment; idempotent."""
        with self._user_lock(user_id):
            buffer = self._buffers.get(user_id)
            decision = BoundaryDecision.none()
            if not buffer or len(buffer) == 0:
                return SegmentationOutcome(False, None, decision, TriggerCause.NONE)
            self._buffers[user_id] = MessageBuffer(user_id=user_id)
            return SegmentationOutcome(True, buffer.messages, decision, TriggerCause.SESSION_END)
