"""The predict-calibrate-integrate learning cycle.

For every new episode the engine forecasts what the conversation should have
contained given the knowledge already on file, compares that forecast against
the raw segmented conversation (never the generated narrative), and distills
the gap into new knowledge statements. Cycles run asynchronously relative to
ingestion but strictly in episode order per user, so knowledge evolution is
deterministic and cycle i+1 sees the facts cycle i produced.
"""

from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass, field as dataclass_field
from datetime import datetime
from enum import Enum
from typing import Callable

from .gateway import ChatRequest, LLMGateway, ParseError, ResponseFormat, RoleTag
from .gateway.base import extract_json_array
from .gateway.prompts import (
    DIRECT_EXTRACTOR_SYSTEM,
    EPISODE_PREDICTOR_SYSTEM,
    KNOWLEDGE_DISTILLER_SYSTEM,
    render_fact_list,
    render_transcript,
)
from .model import EngineConfig, Episode, Message, SemanticFact, format_timestamp, system_clock
from .retrieval import VectorStore, retrieve

logger = logging.getLogger(__name__)


class CycleStatus(str, Enum):
    QUEUED = "queued"
    PREDICTED = "predicted"
    CALIBRATED = "calibrated"
    INTEGRATED = "integrated"
    FAILED = "failed"


_STATUS_ORDER = [
    CycleStatus.QUEUED,
    CycleStatus.PREDICTED,
    CycleStatus.CALIBRATED,
    CycleStatus.INTEGRATED,
]

TERMINAL_STATUSES = (CycleStatus.INTEGRATED, CycleStatus.FAILED)


class CycleStateError(RuntimeError):
    pass


class DrainTimeout(TimeoutError):
    """Drain gave up waiting; carries the ids of the still-running cycles."""

    def __init__(self, stuck_cycle_ids: list[str]):
        super().__init__(f"learning cycles still pending: {', '.join(stuck_cycle_ids)}")
        self.stuck_cycle_ids = stuck_cycle_ids


@dataclass
class LearningCycleRecord:
    """State of one learning cycle; status only moves forward, failed is terminal."""

    episode_id: str
    user_id: str
    retrieved_fact_ids: list[str] = dataclass_field(default_factory=list)
    predicted_content: str = ""
    distilled_statements: list[str] = dataclass_field(default_factory=list)
    status: CycleStatus = CycleStatus.QUEUED
    stage_times: dict[str, datetime] = dataclass_field(default_factory=dict)
    error: str | None = None
    degraded: bool = False

    def __post_init__(self) -> None:
        self.stage_times.setdefault(CycleStatus.QUEUED.value, system_clock())

    def advance(self, status: CycleStatus) -> None:
        if self.status == CycleStatus.FAILED:
            raise CycleStateError("failed is terminal")
        if _STATUS_ORDER.index(status) <= _STATUS_ORDER.index(self.status):
            raise CycleStateError(f"cannot move {self.status.value} -> {status.value}")
        self.status = status
        self.stage_times[status.value] = system_clock()

    def fail(self, error: str) -> None:
        if self.status in TERMINAL_STATUSES:
            raise CycleStateError("cycle already terminal")
        self.status = CycleStatus.FAILED
        self.error = error
        self.stage_times[CycleStatus.FAILED.value] = system_clock()

    @property
    def terminal(self) -> bool:
        return self.status in TERMINAL_STATUSES

    def to_json(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "user_id": self.user_id,
            "retrieved_fact_ids": list(self.retrieved_fact_ids),
            "predicted_content": self.predicted_content,
            "distilled_statements": list(self.distilled_statements),
            "status": self.status.value,
            "stage_times": {k: format_timestamp(v) for k, v in self.stage_times.items()},
            "error": self.error,
            "degraded": self.degraded,
        }


def retrieve_relevant(
    episode: Episode, fact_store: VectorStore, cfg: EngineConfig
) -> list[SemanticFact]:
    """Stage 1a: fetch the knowledge most similar to the new episode.

    Uses the episode's stored embedding directly (it was embedded under the
    same title+narrative text), so no second embedding call is needed.
    """
    hits = retrieve(
        episode.embedding,
        fact_store,
        cfg.semantic_retrieval_limit_for_learning,
        cfg.similarity_threshold,
    )
    return [fact_store.get(hit.item_id) for hit in hits]


def predict_episode(title: str, relevant: list[SemanticFact], provider: LLMGateway) -> str:
    """Stage 1b: forecast the episode's content from its title and prior knowledge."""
    if not title.strip():
        raise ValueError("episode title must be non-empty")
    request = ChatRequest(
        role_tag=RoleTag.EPISODE_PREDICTOR,
        system_prompt=EPISODE_PREDICTOR_SYSTEM,
        user_prompt=(
            f"Episode title: {title}\n\n"
            "Knowledge on file about this user:\n"
            f"{render_fact_list([f.statement for f in relevant])}"
        ),
    )
    return provider.chat(request).strip()


def _parse_statements(response: str) -> list[str]:
    items = extract_json_array(response)
    statements = []
    for item in items:
        if not isinstance(item, str):
            raise ParseError("distiller array items must be strings")
        statements.append(item)
    return statements


def _distill(request: ChatRequest, provider: LLMGateway) -> tuple[list[str], bool]:
    for attempt in range(2):
        response = provider.chat(request)
        try:
            return _parse_statements(response), False
        except ParseError:
            if attempt == 0:
                continue
    logger.warning("distiller output unparseable after retry; treating gap as empty")
    return [], True


def distill_gap(
    predicted: str, segment: tuple[Message, ...], provider: LLMGateway
) -> tuple[list[str], bool]:
    """Stage 2: distill statements from the prediction gap.

    The comparison target is the raw segmented conversation, not the
    generated narrative. Returns (statements, degraded); a parse failure
    after one retry degrades to an empty gap.
    """
    if not segment:
        raise ValueError("cannot calibrate against an empty segment")
    request = ChatRequest(
        role_tag=RoleTag.KNOWLEDGE_DISTILLER,
        system_prompt=KNOWLEDGE_DISTILLER_SYSTEM,
        user_prompt=(
            "Predicted account of the conversation:\n"
            f"{predicted.strip() or '(no prediction was made)'}\n\n"
            "Actual conversation:\n"
            f"{render_transcript(segment)}"
        ),
        response_format=ResponseFormat.JSON_ARRAY,
    )
    return _distill(request, provider)


def distill_direct(
    segment: tuple[Message, ...], provider: LLMGateway
) -> tuple[list[str], bool]:
    """Ablation path: naive extraction straight from the conversation."""
    if not segment:
        raise ValueError("cannot distill from an empty segment")
    request = ChatRequest(
        role_tag=RoleTag.KNOWLEDGE_DISTILLER,
        system_prompt=DIRECT_EXTRACTOR_SYSTEM,
        user_prompt="Conversation:\n" + render_transcript(segment),
        response_format=ResponseFormat.JSON_ARRAY,
    )
    return _distill(request, provider)


def integrate(
    statements: list[str],
    episode_id: str,
    user_id: str,
    embedder,
    fact_store: VectorStore,
    *,
    new_id: Callable[[], str],
    timestamp_for: Callable[[int], datetime],
    on_persist: Callable[[SemanticFact], None] | None = None,
) -> list[SemanticFact]:
    """Stage 3: embed and persist the new statements, all or nothing.

    Validation is minimal by design: statements must be non-empty, and
    exact-string duplicates (after trimming, case-sensitive) of facts the
    user already has are skipped. All embeddings are computed before the
    first fact is stored, so an embedder fault rolls the whole batch back.
    """
    existing = {fact.statement for fact in fact_store.items()}
    fresh: list[str] = []
    for statement in statements:
        text = statement.strip()
        if not text or text in existing:
            continue
        existing.add(text)
        fresh.append(text)
    if not fresh:
        return []
    embeddings = [embedder.embed(text) for text in fresh]
    for vector in embeddings:
        fact_store.check_dimension(vector)
    facts = []
    for index, (text, vector) in enumerate(zip(fresh, embeddings)):
        fact = SemanticFact(
            id=new_id(),
            user_id=user_id,
            statement=text,
            embedding=tuple(vector),
            source_episode_id=episode_id,
            created_at=timestamp_for(index),
        )
        if on_persist is not None:
            on_persist(fact)
        fact_store.add(fact)
        facts.append(fact)
    return facts


def run_learning_cycle(
    record: LearningCycleRecord,
    episode: Episode,
    segment: tuple[Message, ...],
    fact_store: VectorStore,
    provider: LLMGateway,
    embedder,
    cfg: EngineConfig,
    *,
    new_id: Callable[[], str],
    timestamp_for: Callable[[int], datetime],
    on_persist: Callable[[SemanticFact], None] | None = None,
    direct_extraction: bool = False,
) -> LearningCycleRecord:
    """Execute the three stages in order, mutating record as they complete.

    Any stage failure marks the cycle failed; the stores keep exactly the
    state they had before the cycle started (the episode itself was stored
    by the caller and is untouched).
    """
    try:
        if direct_extraction:
            record.advance(CycleStatus.PREDICTED)  # prediction deliberately skipped
            statements, degraded = distill_direct(segment, provider)
        else:
            relevant = retrieve_relevant(episode, fact_store, cfg)
            record.retrieved_fact_ids = [fact.id for fact in relevant]
            record.predicted_content = predict_episode(episode.title, relevant, provider)
            record.advance(CycleStatus.PREDICTED)
            statements, degraded = distill_gap(record.predicted_content, segment, provider)
        record.distilled_statements = statements
        record.degraded = record.degraded or degraded
        record.advance(CycleStatus.CALIBRATED)
        integrate(
            statements,
            episode.id,
            record.user_id,
            embedder,
            fact_store,
            new_id=new_id,
            timestamp_for=timestamp_for,
            on_persist=on_persist,
        )
        record.advance(CycleStatus.INTEGRATED)
    except Exception as exc:  # a broken cycle must never take the pipeline down
        logger.warning("learning cycle for %s failed: %s", record.episode_id, exc)
        record.fail(str(exc))
    return record


class _UserWorker:
    def __init__(self, pipeline: LearningPipeline, user_id: str):
        self.queue: queue.Queue = queue.Queue()
        self.thread = threading.Thread(
            target=pipeline._work, args=(self,), name=f"learning-{user_id}", daemon=True
        )
        self.thread.start()


class LearningPipeline:
    """Per-user FIFO execution of learning cycles on background threads.

    One worker per user keeps cycles for that user in episode-creation
    order; cycles for distinct users run concurrently. Ingestion never
    blocks on this pipeline; drain() is the only synchronization point.
    """

    def __init__(self):
        self._workers: dict[str, _UserWorker] = {}
        self._records: list[LearningCycleRecord] = []
        self._pending: dict[str, int] = {}
        self._lock = threading.Lock()
        self._idle = threading.Condition(self._lock)

    def submit(
        self, record: LearningCycleRecord, run: Callable[[LearningCycleRecord], None]
    ) -> LearningCycleRecord:
        with self._lock:
            worker = self._workers.get(record.user_id)
            if worker is None:
                worker = _UserWorker(self, record.user_id)
                self._workers[record.user_id] = worker
            self._records.append(record)
            self._pending[record.user_id] = self._pending.get(record.user_id, 0) + 1
        worker.queue.put((record, run))
        return record

    def _work(self, worker: _UserWorker) -> None:
        while True:
            record, run = worker.queue.get()
            try:
                run(record)
            except Exception as exc:  # defensive: run() already catches stage errors
                logger.exception("unexpected learning-cycle crash")
                if not record.terminal:
                    record.fail(str(exc))
            finally:
                with self._idle:
                    self._pending[record.user_id] -= 1
                    self._idle.notify_all()

    def records(self, user_id: str | None = None) -> list[LearningCycleRecord]:
        with self._lock:
            records = list(self._records)
        if user_id is not None:
            records = [r for r in records if r.user_id == user_id]
        return records

    def drain(self, user_id: str | None = None, timeout: float | None = None) -> None:
        """Block until queued cycles (optionally one user's) are terminal."""

        def quiet() -> bool:
            if user_id is None:
                return all(count == 0 for count in self._pending.values())
            return self._pending.get(user_id, 0) == 0

        with self._idle:
            if not self._idle.wait_for(quiet, timeout=timeout):
                stuck = [
                    r.episode_id
                    for r in self._records
                    if not r.terminal and (user_id is None or r.user_id == user_id)
                ]
                raise DrainTimeout(stuck)
