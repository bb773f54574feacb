"""The memory engine: wires segmentation, episodes, learning and retrieval.

State is partitioned per user; each partition owns its stores, id sequence
and (in deterministic mode) its logical clock, so a scripted replay produces
bit-identical store files regardless of how worker threads interleave across
users. Episode generation runs synchronously on the segmentation handoff;
only the learning cycle is deferred to the background pipeline.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta

from .episodic import generate_episode, store_episode
from .gateway import LLMGateway
from .gateway.base import ChatBackend, ChatRequest, RoleTag
from .gateway.prompts import ANSWERER_SYSTEM
from .model import (
    EngineConfig,
    Episode,
    IdGenerator,
    Message,
    SemanticFact,
    TickClock,
    system_clock,
    validate_config,
)
from .persistence import (
    Manifest,
    StoreRoot,
    config_hash,
    cycle_record,
    episode_record,
    fact_record,
)
from .retrieval import MemoryContext, MemoryKind, VectorStore, assemble_context
from .segmentation import SegmentationOutcome, Segmenter
from .semantic import CycleStatus, LearningCycleRecord, LearningPipeline, run_learning_cycle
from .transcript import Transcript

logger = logging.getLogger(__name__)

FACT_TIMESTAMP_STEP = timedelta(milliseconds=1)


class EngineError(Exception):
    pass


class UnknownUserError(EngineError):
    pass


class IngestError(EngineError):
    """Ingest aborted; carries the partial report for what did land."""

    def __init__(self, message: str, report: IngestReport):
        super().__init__(message)
        self.report = report


class AnswerError(EngineError):
    """Answering failed; carries the assembled context for offline inspection."""

    def __init__(self, message: str, context: MemoryContext):
        super().__init__(message)
        self.context = context


@dataclass
class IngestReport:
    messages: int = 0
    episodes: int = 0
    facts: int = 0
    failed_cycles: int = 0

    def to_json(self) -> dict:
        return {
            "messages": self.messages,
            "episodes": self.episodes,
            "facts": self.facts,
            "failed_cycles": self.failed_cycles,
        }


@dataclass
class _UserPartition:
    """Everything the engine keeps for one user."""

    user_id: str
    episodes: VectorStore
    facts: VectorStore
    ids: IdGenerator
    clock: object  # Callable[[], datetime]
    lock: threading.Lock = field(default_factory=threading.Lock)


class MemoryEngine:
    """Facade over the full pipeline for a fleet of users.

    ``deterministic`` (defaulting to whatever the backend reports) switches
    ids and timestamps to reproducible per-user sequences. The three ablation
    flags reproduce the reduced configurations: retrieval without episodes,
    retrieval without facts, and naive direct extraction instead of the
    predict-calibrate cycle.
    """

    def __init__(
        self,
        provider: LLMGateway | ChatBackend,
        config: EngineConfig | None = None,
        store_root: str | None = None,
        *,
        deterministic: bool | None = None,
        episodic_retrieval: bool = True,
        semantic_retrieval: bool = True,
        direct_extraction: bool = False,
        drain_timeout: float = 60.0,
    ):
        self.gateway = provider if isinstance(provider, LLMGateway) else LLMGateway(provider)
        self.config = validate_config(config or EngineConfig())
        self.deterministic = (
            self.gateway.deterministic if deterministic is None else deterministic
        )
        self.episodic_retrieval = episodic_retrieval
        self.semantic_retrieval = semantic_retrieval
        self.direct_extraction = direct_extraction
        self.drain_timeout = drain_timeout

        self.segmenter = Segmenter(self.gateway, self.config)
        self.pipeline = LearningPipeline()
        self.store = StoreRoot(store_root) if store_root else None
        self._partitions: dict[str, _UserPartition] = {}
        self._registry_lock = threading.Lock()

        self._manifest_dimension: int | None = None
        if self.store is not None:
            manifest = self.store.read_manifest()
            if manifest is not None:
                self._manifest_dimension = manifest.embedding_dimension
                if manifest.engine_config_hash and manifest.engine_config_hash != config_hash(self.config):
                    logger.warning("store was written under a different engine config")
            self._restore()
            self._sync_manifest()

    # -- partitions ----------------------------------------------------------

    def _partition(self, user_id: str, create: bool = True) -> _UserPartition | None:
        with self._registry_lock:
            part = self._partitions.get(user_id)
            if part is None and create:
                clock = TickClock() if self.deterministic else system_clock
                part = _UserPartition(
                    user_id=user_id,
                    episodes=VectorStore(MemoryKind.EPISODE, dimension=self._manifest_dimension),
                    facts=VectorStore(MemoryKind.FACT, dimension=self._manifest_dimension),
                    ids=IdGenerator(deterministic=self.deterministic),
                    clock=clock,
                )
                self._partitions[user_id] = part
            return part

    def _restore(self) -> None:
        for user_id in self.store.user_ids():
            episodes, facts = self.store.load_user(user_id)
            part = self._partition(user_id)
            latest: datetime | None = None
            for episode in episodes:
                part.episodes.add(episode)
                part.ids.observe(episode.id)
                latest = max(latest, episode.created_at) if latest else episode.created_at
            for fact in facts:
                part.facts.add(fact)
                part.ids.observe(fact.id)
                latest = max(latest, fact.created_at) if latest else fact.created_at
            if latest is not None and isinstance(part.clock, TickClock):
                part.clock.advance_past(latest)

    def _sync_manifest(self) -> None:
        if self.store is None:
            return
        dimension = self._manifest_dimension or self.gateway.embedding_dimension
        for part in self._partitions.values():
            dimension = part.episodes.dimension or part.facts.dimension or dimension
        self.store.write_manifest(
            Manifest(embedding_dimension=dimension, engine_config_hash=config_hash(self.config))
        )

    def known_user(self, user_id: str) -> bool:
        with self._registry_lock:
            if user_id in self._partitions:
                return True
        return self.segmenter.known_user(user_id)

    def user_ids(self) -> list[str]:
        with self._registry_lock:
            return sorted(self._partitions)

    # -- ingestion -----------------------------------------------------------

    def append_message(self, user_id: str, msg: Message) -> SegmentationOutcome:
        part = self._partition(user_id)
        with part.lock:
            outcome = self.segmenter.append_message(user_id, msg)
            if outcome.triggered:
                self._handle_segment(part, outcome.segment)
        return outcome

    def flush_session(self, user_id: str) -> SegmentationOutcome:
        part = self._partition(user_id)
        with part.lock:
            outcome = self.segmenter.flush_session(user_id)
            if outcome.triggered:
                self._handle_segment(part, outcome.segment)
        return outcome

    def _handle_segment(self, part: _UserPartition, segment: tuple[Message, ...]) -> None:
        draft = generate_episode(segment, self.gateway)
        episode_log = self.store.episode_log(part.user_id) if self.store else None
        episode = store_episode(
            draft,
            segment,
            part.user_id,
            self.gateway,
            part.episodes,
            new_id=lambda: part.ids.new_id("ep"),
            clock=part.clock,
            on_persist=(lambda ep: episode_log.append(episode_record(ep))) if episode_log else None,
        )
        self._queue_cycle(part, episode, segment)

    def _queue_cycle(
        self, part: _UserPartition, episode: Episode, segment: tuple[Message, ...]
    ) -> None:
        record = LearningCycleRecord(episode_id=episode.id, user_id=part.user_id)
        fact_log = self.store.fact_log(part.user_id) if self.store else None
        cycle_log = self.store.cycle_log(part.user_id) if self.store else None

        if self.deterministic:
            # Logical fact timestamps hang off the episode so replay files are
            # identical no matter how the worker thread interleaves with ingest.
            def timestamp_for(index: int) -> datetime:
                return episode.created_at + FACT_TIMESTAMP_STEP * (index + 1)
        else:
            def timestamp_for(index: int) -> datetime:
                return system_clock()

        def run(rec: LearningCycleRecord) -> None:
            run_learning_cycle(
                rec,
                episode,
                segment,
                part.facts,
                self.gateway,
                self.gateway,
                self.config,
                new_id=lambda: part.ids.new_id("fact"),
                timestamp_for=timestamp_for,
                on_persist=(lambda f: fact_log.append(fact_record(f))) if fact_log else None,
                direct_extraction=self.direct_extraction,
            )
            if cycle_log is not None:
                cycle_log.append(cycle_record(rec.to_json()))

        self.pipeline.submit(record, run)

    def drain(self, user_id: str | None = None, timeout: float | None = None) -> None:
        self.pipeline.drain(user_id, timeout if timeout is not None else self.drain_timeout)

    def ingest(self, transcript: Transcript) -> IngestReport:
        """Stream a transcript through segmentation, then drain the pipeline.

        The conversation id is used as the memory owner (user id). A store
        failure aborts with an IngestError carrying the partial report.
        """
        user_id = transcript.conversation_id
        report = IngestReport()
        before = self._counts(user_id)
        try:
            for session in transcript.sessions:
                for msg in session.messages:
                    self.append_message(user_id, msg)
                    report.messages += 1
                self.flush_session(user_id)
            self.drain(user_id)
        except Exception as exc:
            self._fill_report(report, user_id, before)
            raise IngestError(f"ingest aborted: {exc}", report) from exc
        self._fill_report(report, user_id, before)
        if self.store is not None:
            self._sync_manifest()
        return report

    def _counts(self, user_id: str) -> tuple[int, int, int]:
        part = self._partition(user_id)
        failed = sum(1 for r in self.pipeline.records(user_id) if r.status == CycleStatus.FAILED)
        return len(part.episodes), len(part.facts), failed

    def _fill_report(self, report: IngestReport, user_id: str, before: tuple[int, int, int]) -> None:
        episodes, facts, failed = self._counts(user_id)
        report.episodes = episodes - before[0]
        report.facts = facts - before[1]
        report.failed_cycles = failed - before[2]

    # -- read side -----------------------------------------------------------

    def episodes(self, user_id: str) -> list[Episode]:
        part = self._partition(user_id, create=False)
        return part.episodes.items() if part else []

    def facts(self, user_id: str) -> list[SemanticFact]:
        part = self._partition(user_id, create=False)
        return part.facts.items() if part else []

    def cycle_records(self, user_id: str | None = None) -> list[LearningCycleRecord]:
        return self.pipeline.records(user_id)

    def search(self, user_id: str, query: str, k: int | None = None) -> MemoryContext:
        """Assemble the memory context for a query; empty for unseen users."""
        cfg = self.config if k is None else self.config.with_top_k(k)
        part = self._partition(user_id, create=False)
        episode_store = part.episodes if part else VectorStore(MemoryKind.EPISODE)
        fact_store = part.facts if part else VectorStore(MemoryKind.FACT)
        return assemble_context(
            query,
            user_id,
            episode_store,
            fact_store,
            self.gateway,
            cfg,
            include_episodes=self.episodic_retrieval,
            include_facts=self.semantic_retrieval,
        )

    def answer(
        self,
        user_id: str,
        question: str,
        k: int | None = None,
        answer_provider: LLMGateway | None = None,
    ) -> tuple[str, MemoryContext]:
        """Answer a question from assembled memory, returning the context used."""
        if not self.known_user(user_id):
            raise UnknownUserError(f"no messages ingested for user {user_id!r}")
        context = self.search(user_id, question, k)
        provider = answer_provider or self.gateway
        request = ChatRequest(
            role_tag=RoleTag.ANSWERER,
            system_prompt=ANSWERER_SYSTEM,
            user_prompt=f"{context.rendered}\nQuestion: {question}\nAnswer concisely.",
        )
        try:
            reply = provider.chat(request).strip()
        except Exception as exc:
            raise AnswerError(str(exc), context) from exc
        return reply, context

    def close(self) -> None:
        if self.store is not None:
            self.store.close()
