"""Episode generation and storage.

A flushed segment is rewritten by the episode generator into a title plus a
third-person narrative, embedded under title+newline+narrative, and stored
with its verbatim source messages. Storage is atomic: an embedding failure
leaves the store exactly as it was.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import datetime
from typing import Callable

from .gateway import ChatRequest, LLMGateway, ParseError, ResponseFormat, RoleTag
from .gateway.base import extract_json_object
from .gateway.prompts import EPISODE_GENERATOR_SYSTEM, render_transcript
from .model import Episode, Message, Role, episode_text
from .retrieval import VectorStore

logger = logging.getLogger(__name__)

FALLBACK_TITLE_WORDS = 8


@dataclass(frozen=True)
class EpisodeDraft:
    """Generator output before storage; degraded marks the fallback path."""

    title: str
    narrative: str
    degraded: bool = False

    def __post_init__(self) -> None:
        if not self.title.strip() or not self.narrative.strip():
            raise ValueError("episode draft title and narrative must be non-empty")


def _fallback_draft(segment: tuple[Message, ...]) -> EpisodeDraft:
    """Last-resort draft when the generator output stays unparseable."""
    first_user = next((m for m in segment if m.role == Role.USER), segment[0])
    title = " ".join(first_user.content.split()[:FALLBACK_TITLE_WORDS])
    return EpisodeDraft(
        title=title or "untitled conversation",
        narrative=render_transcript(segment),
        degraded=True,
    )


def generate_episode(segment: tuple[Message, ...], provider: LLMGateway) -> EpisodeDraft:
    """Turn a segment into a draft episode via the generator role.

    Output is parsed as a JSON object with "title" and "narrative"; a parse
    failure is retried once then degraded to a verbatim-transcript draft.
    """
    if not segment:
        raise ValueError("cannot generate an episode from an empty segment")
    request = ChatRequest(
        role_tag=RoleTag.EPISODE_GENERATOR,
        system_prompt=EPISODE_GENERATOR_SYSTEM,
        user_prompt="Conversation segment:\n" + render_transcript(segment),
        response_format=ResponseFormat.JSON_OBJECT,
    )
    for attempt in range(2):
        response = provider.chat(request)
        try:
            payload = extract_json_object(response)
            title, narrative = payload["title"], payload["narrative"]
            if not isinstance(title, str) or not isinstance(narrative, str):
                raise ParseError("title and narrative must be strings")
            return EpisodeDraft(title=title, narrative=narrative)
        except (ParseError, KeyError, TypeError, ValueError):
            if attempt == 0:
                continue
    logger.warning("episode generator output unparseable after retry; storing degraded draft")
    return _fallback_draft(segment)


def store_episode(
    draft: EpisodeDraft,
    segment: tuple[Message, ...],
    user_id: str,
    embedder,
    store: VectorStore,
    *,
    new_id: Callable[[], str],
    clock: Callable[[], datetime],
    on_persist: Callable[[Episode], None] | None = None,
) -> Episode:
    """Embed, identify, and persist a draft as a retrievable Episode.

    The embedding (and its dimension check) happens before any state
    changes, so an embedder fault cannot leave a half-stored episode.
    """
    embedding = embedder.embed(episode_text(draft.title, draft.narrative))
    store.check_dimension(embedding)
    episode = Episode(
        id=new_id(),
        user_id=user_id,
        title=draft.title,
        narrative=draft.narrative,
        source_messages=tuple(segment),
        embedding=tuple(embedding),
        time_span=(segment[0].timestamp, segment[-1].timestamp),
        created_at=clock(),
    )
    if on_persist is not None:
        on_persist(episode)
    store.add(episode)
    return episode
