"""Unified dense-vector retrieval over both memory stores.

One retrieval function serves episodes and facts alike: compute cosine
similarity against every stored item, keep the top-m (ties broken by
created_at then id, so replays are deterministic), then drop anything below
the similarity threshold. Search is an exact linear scan; stores are
per-user and modest, and oracle-testability outranks ANN speed. The store
interface is small enough that an approximate index could be swapped in.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Protocol

import numpy as np

from .gateway.prompts import render_transcript
from .model import Episode, EngineConfig, SemanticFact, format_timestamp

CONTEXT_FORMAT_VERSION = 1

EPISODES_MARKER = "== EPISODES =="
KNOWLEDGE_MARKER = "== KNOWLEDGE =="


class RetrievalError(ValueError):
    pass


class DimensionMismatch(RetrievalError):
    pass


class MemoryKind(str, Enum):
    EPISODE = "episode"
    FACT = "fact"


def cosine_similarity(a: Iterable[float], b: Iterable[float]) -> float:
    """a.b / (|a||b|); errors on dimension mismatch or an all-zero vector."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape or va.ndim != 1:
        raise DimensionMismatch(f"dimension mismatch: {va.shape} vs {vb.shape}")
    norm_a = float(np.linalg.norm(va))
    norm_b = float(np.linalg.norm(vb))
    if norm_a == 0.0 or norm_b == 0.0:
        raise RetrievalError("undefined similarity for a zero vector")
    return float(np.dot(va, vb) / (norm_a * norm_b))


class StoredItem(Protocol):
    id: str
    embedding: tuple[float, ...]


@dataclass(frozen=True)
class ScoredItem:
    item_id: str
    similarity: float
    kind: MemoryKind


class VectorStore:
    """In-memory store of embedded records (episodes or facts) for one user.

    The first vector stored locks in the dimension; every later add must
    match it. Reads take a snapshot under the lock, so retrieval sees a
    consistent state even with a concurrent writer.
    """

    def __init__(self, kind: MemoryKind, dimension: int | None = None):
        self.kind = MemoryKind(kind)
        self._dimension = dimension
        self._items: dict[str, Episode | SemanticFact] = {}
        self._lock = threading.Lock()

    @property
    def dimension(self) -> int | None:
        return self._dimension

    def check_dimension(self, vector: Iterable[float]) -> None:
        length = len(tuple(vector))
        if self._dimension is not None and length != self._dimension:
            raise DimensionMismatch(
                f"dimension mismatch: store holds {self._dimension}-d vectors, got {length}-d"
            )

    def add(self, item: Episode | SemanticFact) -> None:
        with self._lock:
            if item.id in self._items:
                raise RetrievalError(f"duplicate id: {item.id}")
            if self._dimension is None:
                self._dimension = len(item.embedding)
            elif len(item.embedding) != self._dimension:
                raise DimensionMismatch(
                    f"dimension mismatch: store holds {self._dimension}-d vectors, "
                    f"got {len(item.embedding)}-d"
                )
            self._items[item.id] = item

    def get(self, item_id: str):
        with self._lock:
            return self._items[item_id]

    def items(self) -> list:
        with self._lock:
            return list(self._items.values())

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)


def retrieve(
    query: Iterable[float],
    store: VectorStore,
    m: int,
    similarity_threshold: float | None = None,
) -> list[ScoredItem]:
    """Three stages: score every item, keep the top-m, filter by threshold.

    Ties in similarity break by earlier created_at, then id. The threshold
    filter keeps items scoring exactly at the threshold.
    """
    if m < 1:
        raise RetrievalError("m must be a positive integer")
    items = store.items()
    if not items:
        return []
    qvec = tuple(query)
    store.check_dimension(qvec)
    scored = [(cosine_similarity(qvec, item.embedding), item) for item in items]
    scored.sort(key=lambda pair: (-pair[0], pair[1].created_at, pair[1].id))
    selected = scored[:m]
    if similarity_threshold is not None:
        selected = [pair for pair in selected if pair[0] >= similarity_threshold]
    return [ScoredItem(item.id, sim, store.kind) for sim, item in selected]


def default_token_estimate(text: str) -> int:
    """Cheap chars/4 heuristic; swap in a real tokenizer via token_estimator."""
    return (len(text) + 3) // 4


@dataclass(frozen=True)
class RankedEpisode:
    episode: Episode
    similarity: float
    include_raw_text: bool

    def to_json(self) -> dict:
        data = self.episode.to_json()
        if not self.include_raw_text:
            data.pop("source_messages")
        data.pop("embedding")
        data["similarity"] = self.similarity
        data["include_raw_text"] = self.include_raw_text
        return data


@dataclass(frozen=True)
class RankedFact:
    fact: SemanticFact
    similarity: float

    def to_json(self) -> dict:
        data = self.fact.to_json()
        data.pop("embedding")
        data["similarity"] = self.similarity
        return data


@dataclass(frozen=True)
class MemoryContext:
    """Assembled retrieval result, ready for prompt injection."""

    user_id: str
    query: str
    episodes: tuple[RankedEpisode, ...]
    facts: tuple[RankedFact, ...]
    rendered: str
    token_estimate: int

    def to_json(self) -> dict:
        return {
            "user_id": self.user_id,
            "query": self.query,
            "episodes": [e.to_json() for e in self.episodes],
            "facts": [f.to_json() for f in self.facts],
            "rendered": self.rendered,
            "token_estimate": self.token_estimate,
        }


def render_context(
    user_id: str,
    query: str,
    episodes: tuple[RankedEpisode, ...],
    facts: tuple[RankedFact, ...],
) -> str:
    """Deterministic text block; golden tests compare it byte-for-byte."""
    lines = [f"== MEMORY CONTEXT v{CONTEXT_FORMAT_VERSION} ==", f"user: {user_id}", ""]
    lines.append(EPISODES_MARKER)
    if not episodes:
        lines.append("(none)")
    for rank, entry in enumerate(episodes, start=1):
        ep = entry.episode
        lines.append(f"[{rank}] {ep.title}")
        lines.append(
            f"    when: {format_timestamp(ep.time_span[0])} .. {format_timestamp(ep.time_span[1])}"
        )
        lines.append(f"    {ep.narrative}")
        if entry.include_raw_text:
            lines.append("    original conversation:")
            for msg_line in render_transcript(ep.source_messages).splitlines():
                lines.append(f"    | {msg_line}")
    lines.append("")
    lines.append(KNOWLEDGE_MARKER)
    if not facts:
        lines.append("(none)")
    for entry in facts:
        day = format_timestamp(entry.fact.created_at)[:10]
        lines.append(f"- ({day}) {entry.fact.statement}")
    lines.append("")
    return "\n".join(lines)


def assemble_context(
    query_text: str,
    user_id: str,
    episode_store: VectorStore,
    fact_store: VectorStore,
    embedder,
    cfg: EngineConfig,
    *,
    include_episodes: bool = True,
    include_facts: bool = True,
    token_estimator: Callable[[str], int] | None = None,
) -> MemoryContext:
    """Query-time recipe: top-k episodes and top-(multiplier*k) facts, with
    raw transcripts attached to the highest-ranked raw_text_episode_count
    episodes."""
    if not query_text or not query_text.strip():
        raise ValueError("query text must be non-empty")
    query_vec = embedder.embed(query_text)
    threshold = cfg.similarity_threshold

    episodes: tuple[RankedEpisode, ...] = ()
    if include_episodes:
        hits = retrieve(query_vec, episode_store, cfg.top_k_episodes, threshold)
        episodes = tuple(
            RankedEpisode(
                episode=episode_store.get(hit.item_id),
                similarity=hit.similarity,
                include_raw_text=rank < cfg.raw_text_episode_count,
            )
            for rank, hit in enumerate(hits)
        )

    facts: tuple[RankedFact, ...] = ()
    if include_facts:
        hits = retrieve(query_vec, fact_store, cfg.top_m_facts, threshold)
        facts = tuple(RankedFact(fact_store.get(hit.item_id), hit.similarity) for hit in hits)

    rendered = render_context(user_id, query_text, episodes, facts)
    estimator = token_estimator or default_token_estimate
    return MemoryContext(
        user_id=user_id,
        query=query_text,
        episodes=episodes,
        facts=facts,
        rendered=rendered,
        token_estimate=estimator(rendered),
    )
