"""Prompt texts for each model role, plus the shared transcript rendering.

These prompts are an experimental surface: they encode the behavioral
contracts (third-person narration, absolute dates, JSON output shapes) that
the rest of the engine parses against.
"""

from __future__ import annotations

from ..model import Message, format_timestamp

BOUNDARY_DETECTOR_SYSTEM = """\
You watch a two-party conversation as it streams in. Given the recent \
message buffer and one new incoming message, decide whether the new message \
crosses a topic or event boundary, i.e. whether it starts something new \
rather than continuing what the buffer is about.

Weigh these signals:
- contextual coherence: how semantically close the new message is to the buffer;
- temporal markers: phrases like "by the way", "anyway", "on another note", \
or a large jump in timestamps;
- shifts in user intent: e.g. from gathering information to making a decision, \
or from one task to an unrelated one;
- structural signals: greetings, closings, explicit topic announcements.

Respond with exactly one JSON object and nothing else:
{"is_boundary": <true|false>, "confidence": <number between 0 and 1>}"""

EPISODE_GENERATOR_SYSTEM = """\
You turn a finished conversation segment into one episodic memory.

Write:
- "title": a short, specific phrase capturing what the segment was about;
- "narrative": a detailed third-person account of what happened, preserving \
the salient facts, decisions, names, quantities and dates. Never use "I" or \
"you"; refer to the participants as "the user" and "the assistant" (or by \
name when one is given). Resolve every relative time expression ("yesterday", \
"next Friday") into an absolute calendar date using the message timestamps.

Respond with exactly one JSON object and nothing else:
{"title": "...", "narrative": "..."}"""

EPISODE_PREDICTOR_SYSTEM = """\
You forecast the content of a conversation episode you have not seen. You are \
given the episode's title and whatever knowledge is already on file about \
this user. Write a short plain-text prediction of what the conversation most \
likely contained: the topics raised, what the user wanted, and the likely \
outcome. State it as your best guess, not as questions. Respond with the \
prediction text only."""

KNOWLEDGE_DISTILLER_SYSTEM = """\
You compare a predicted account of a conversation against the actual \
conversation transcript and extract only what the prediction failed to \
anticipate: the new, surprising or corrected information.

Rules:
- each item is one self-contained declarative statement, understandable \
without the conversation;
- resolve relative time expressions into absolute calendar dates using the \
message timestamps;
- skip anything the prediction already covers;
- if the prediction fully covers the conversation, return an empty array.

Respond with exactly one JSON array of strings and nothing else, e.g.
["...", "..."] or []"""

DIRECT_EXTRACTOR_SYSTEM = """\
You read a conversation transcript and extract the durable knowledge worth \
remembering about the user and their world.

Rules:
- each item is one self-contained declarative statement, understandable \
without the conversation;
- resolve relative time expressions into absolute calendar dates using the \
message timestamps;
- if there is nothing durable to remember, return an empty array.

Respond with exactly one JSON array of strings and nothing else, e.g.
["...", "..."] or []"""

ANSWERER_SYSTEM = """\
You answer a question about a specific user using the memory context \
provided. The context lists remembered episodes (with some raw transcripts) \
and distilled knowledge statements. Rely on the context; if it does not \
contain the answer, say so briefly. Answer concisely, with no preamble."""


def render_transcript(messages: tuple[Message, ...] | list[Message]) -> str:
    """Deterministic plain-text rendering of messages, one line per turn."""
    return "\n".join(
        f"[{format_timestamp(m.timestamp)}] {m.role.value}: {m.content}" for m in messages
    )


def render_fact_list(statements: list[str]) -> str:
    if not statements:
        return "(no prior knowledge on file)"
    return "\n".join(f"- {s}" for s in statements)
