"""Acceptance suite: one test per exit criterion, one PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines alongside the pytest verdicts.
"""

import itertools
import json
import random
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from memoir.cli import main as cli_main
from memoir.engine import MemoryEngine
from memoir.gateway import LLMGateway, RoleTag, load_script
from memoir.gateway.prompts import render_transcript
from memoir.metrics import bleu1, token_f1
from memoir.model import BoundaryDecision, EngineConfig, SemanticFact
from memoir.retrieval import MemoryKind, VectorStore, default_token_estimate, retrieve
from memoir.segmentation import Segmenter, TriggerCause, should_trigger
from memoir.semantic import CycleStatus
from memoir.service import create_app
from memoir.transcript import load_transcript

from conftest import boundary_json, boundary_rule, make_gateway, msg

DATA = Path(__file__).parent / "data"
TRANSCRIPT = DATA / "replay_transcript.json"
SCRIPT = DATA / "replay_script.json"
REPLAY_QUERY = "When did Jon receive mentorship?"


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE FAIL  {name}")
        raise
    print(f"ACCEPTANCE PASS  {name}")


def test_trigger_truth_table():
    """Exhaustive (b, c, len) grid matches the trigger formula, zero tolerance."""
    with criterion("eq2-trigger-truth-table (50 cells)"):
        cfg = EngineConfig()  # sigma=0.7, capacity=25
        cells = list(
            itertools.product((True, False), (0.0, 0.69, 0.7, 0.71, 1.0), (0, 1, 24, 25, 26))
        )
        assert len(cells) == 50
        for b, c, length in cells:
            expected = (b and c > 0.7) or (length >= 25)
            triggered, cause = should_trigger(BoundaryDecision(b, c), length, cfg)
            assert triggered == expected, f"cell {(b, c, length)}"
            expected_cause = (
                TriggerCause.BUFFER_FULL
                if length >= 25
                else TriggerCause.SEMANTIC_BOUNDARY
                if expected
                else TriggerCause.NONE
            )
            assert cause == expected_cause, f"cell {(b, c, length)}"


def test_retrieval_oracle_equivalence():
    """retrieve() equals brute-force sort-truncate-filter on >=200 random trials."""
    with criterion("retrieval-oracle-equivalence (220 trials)"):
        rng = np.random.default_rng(20240601)
        thresholds = [-1.0, 0.0, 0.3]
        for trial in range(220):
            n = int(rng.integers(1, 101))
            dim = int(rng.integers(2, 9))
            m = int(rng.integers(1, 21))
            threshold = thresholds[trial % 3]
            store = VectorStore(MemoryKind.FACT)
            duplicate_pool = rng.normal(size=(max(1, n // 4), dim))
            for i in range(n):
                if rng.random() < 0.2:  # force exact ties to exercise tie-breaks
                    vec = duplicate_pool[int(rng.integers(0, len(duplicate_pool)))]
                else:
                    vec = rng.normal(size=dim)
                store.add(
                    SemanticFact(
                        id=f"fact-{i:06d}",
                        user_id="u",
                        statement=f"s{i}",
                        embedding=tuple(float(x) for x in vec),
                        source_episode_id="ep-1",
                        created_at=f"2024-01-01T00:{i // 60:02d}:{i % 60:02d}+00:00",
                    )
                )
            query = rng.normal(size=dim)

            # independent oracle: score all, stable sort, truncate, filter
            scored = []
            for item in store.items():
                q = np.asarray(query)
                v = np.asarray(item.embedding)
                sim = float(np.dot(q, v) / (np.linalg.norm(q) * np.linalg.norm(v)))
                scored.append((sim, item.created_at, item.id))
            scored.sort(key=lambda t: (-t[0], t[1], t[2]))
            expected = [(t[2], t[0]) for t in scored[:m] if t[0] >= threshold]

            got = [(r.item_id, r.similarity) for r in retrieve(query, store, m, threshold)]
            assert got == expected, f"trial {trial}"


def _http_ingest(store_dir: Path) -> None:
    engine = MemoryEngine(LLMGateway(load_script(SCRIPT)), store_root=str(store_dir))
    client = TestClient(create_app(engine))
    transcript = load_transcript(TRANSCRIPT)
    for session in transcript.sessions:
        for m in session.messages:
            response = client.post(
                f"/v1/users/{transcript.conversation_id}/messages",
                json={
                    "role": m.role.value,
                    "content": m.content,
                    "timestamp": m.timestamp.isoformat(),
                },
            )
            assert response.status_code == 200
        assert client.post(f"/v1/users/{transcript.conversation_id}/flush").status_code == 200
    assert client.post("/v1/admin/drain", json={}).status_code == 200
    engine.close()


def _cli_ingest(store_dir: Path) -> None:
    result = CliRunner().invoke(
        cli_main,
        ["ingest", "--transcript", str(TRANSCRIPT), "--store", str(store_dir),
         "--provider", "scripted", "--script", str(SCRIPT)],
    )
    assert result.exit_code == 0, result.output


def _rendered_context(store_dir: Path) -> str:
    engine = MemoryEngine(LLMGateway(load_script(SCRIPT)), store_root=str(store_dir))
    rendered = engine.search("alice", REPLAY_QUERY).rendered
    engine.close()
    return rendered


def test_deterministic_end_to_end_replay(tmp_path):
    """Two CLI runs and an HTTP run leave byte-identical stores and contexts."""
    with criterion("deterministic-e2e-replay (CLI x2 + HTTP)"):
        dirs = [tmp_path / name for name in ("cli_a", "cli_b", "http_c")]
        _cli_ingest(dirs[0])
        _cli_ingest(dirs[1])
        _http_ingest(dirs[2])
        for filename in ("episodes.jsonl", "facts.jsonl"):
            blobs = [(d / "alice" / filename).read_bytes() for d in dirs]
            assert blobs[0] == blobs[1], f"{filename}: CLI runs differ"
            assert blobs[0] == blobs[2], f"{filename}: CLI vs HTTP differ"
        contexts = [_rendered_context(d) for d in dirs]
        assert contexts[0] == contexts[1] == contexts[2]


def test_segmentation_conservation():
    """Random append/flush interleavings never lose or duplicate a message."""
    with criterion("segmentation-conservation (1200 messages, 6 users)"):
        rng = random.Random(424242)
        gateway = make_gateway(
            rules=[boundary_rule("#topic-shift#", True, 0.95, once=False)],
            defaults={RoleTag.BOUNDARY_DETECTOR: boundary_json(False, 0.0)},
        )
        segmenter = Segmenter(gateway, EngineConfig(max_buffer_size=9))
        users = [f"user-{i}" for i in range(6)]
        appended: dict = {}
        emitted: dict = {}
        counters = {u: 0 for u in users}

        def credit(bag, user, content):
            bag[(user, content)] = bag.get((user, content), 0) + 1

        for _ in range(1200):
            user = rng.choice(users)
            counters[user] += 1
            marker = "#topic-shift#" if rng.random() < 0.1 else "steady"
            content = f"{user} note {counters[user]} {marker}"
            credit(appended, user, content)
            outcome = segmenter.append_message(user, msg(content, counters[user]))
            if outcome.triggered:
                for m in outcome.segment:
                    credit(emitted, user, m.content)
            if rng.random() < 0.05:
                outcome = segmenter.flush_session(user)
                if outcome.triggered:
                    for m in outcome.segment:
                        credit(emitted, user, m.content)
        for user in users:
            outcome = segmenter.flush_session(user)
            if outcome.triggered:
                for m in outcome.segment:
                    credit(emitted, user, m.content)
        assert emitted == appended


ORDERING_SCRIPT = {
    "strict": True,
    "embedding_dimension": 8,
    "defaults": {"boundary_detector": {"is_boundary": False, "confidence": 0.0}},
    "rules": [
        {"role": "boundary_detector", "contains": "Now about the garden",
         "response": {"is_boundary": True, "confidence": 0.9}, "once": True},
        {"role": "episode_generator", "contains": "Biscuit",
         "response": {"title": "Meet the cat", "narrative": "The user introduced their cat."}},
        {"role": "episode_generator", "contains": "tomato",
         "response": {"title": "Garden plans", "narrative": "The user planned the garden."}},
        {"role": "episode_predictor", "contains": "Episode title: Meet the cat",
         "response": "prediction one"},
        {"role": "episode_predictor", "contains": "Episode title: Garden plans",
         "response": "prediction two"},
        {"role": "knowledge_distiller", "contains": "Biscuit",
         "response": ["The user's cat is named Biscuit."]},
        {"role": "knowledge_distiller", "contains": "tomato",
         "response": ["The user grows tomatoes."]},
    ],
}


def _ordering_engine(tmp_path, script=ORDERING_SCRIPT, **engine_kwargs) -> MemoryEngine:
    path = tmp_path / "ordering_script.json"
    path.write_text(json.dumps(script))
    return MemoryEngine(
        LLMGateway(load_script(path)),
        config=EngineConfig(similarity_threshold=-1.0),
        **engine_kwargs,
    )


def test_predict_calibrate_ordering(tmp_path):
    """Cycle-1 facts are visible to cycle 2; zero-gap and failure change nothing."""
    with criterion("predict-calibrate-ordering + zero-gap + failure-isolation"):
        # two-episode replay: second cycle's prediction must see the first fact
        engine = _ordering_engine(tmp_path)
        for i, text in enumerate(
            ["My cat Biscuit did something silly.", "Biscuit knocked over a plant.",
             "Now about the garden plans.", "I want to plant tomato beds this weekend."]
        ):
            engine.append_message("u-order", msg(text, i))
        engine.flush_session("u-order")
        engine.drain("u-order")

        records = engine.cycle_records("u-order")
        assert [r.status for r in records] == [CycleStatus.INTEGRATED] * 2
        first_fact = engine.facts("u-order")[0]
        assert first_fact.statement == "The user's cat is named Biscuit."
        assert records[1].retrieved_fact_ids == [first_fact.id]
        predictor_calls = engine.gateway.call_log.records(
            kind="chat", role_tag=RoleTag.EPISODE_PREDICTOR
        )
        assert "no prior knowledge" in predictor_calls[0].prompt
        assert "The user's cat is named Biscuit." in predictor_calls[1].prompt

        # the distiller calibrates against the raw segment, never the narrative
        distiller_calls = engine.gateway.call_log.records(
            kind="chat", role_tag=RoleTag.KNOWLEDGE_DISTILLER
        )
        assert len(distiller_calls) == 2
        assert "Biscuit knocked over a plant." in distiller_calls[0].prompt
        for call in distiller_calls:
            assert "The user introduced their cat." not in call.prompt
            assert "The user planned the garden." not in call.prompt

        # zero-gap: cycle 1 stores one fact, cycle 2 finds no gap, |K| is unchanged
        zero_gap = dict(ORDERING_SCRIPT)
        zero_gap["rules"] = [
            r for r in ORDERING_SCRIPT["rules"]
            if not (r["role"] == "knowledge_distiller" and r["contains"] == "tomato")
        ] + [{"role": "knowledge_distiller", "contains": "tomato", "response": []}]
        engine2 = _ordering_engine(tmp_path, zero_gap)
        for i, text in enumerate(
            ["My cat Biscuit again.", "Biscuit sat on the keyboard.",
             "Now about the garden plans.", "The tomato beds need compost."]
        ):
            engine2.append_message("u-zero", msg(text, i))
        engine2.flush_session("u-zero")
        engine2.drain("u-zero")
        assert [r.status for r in engine2.cycle_records("u-zero")] == [
            CycleStatus.INTEGRATED,
            CycleStatus.INTEGRATED,
        ]
        assert [f.statement for f in engine2.facts("u-zero")] == [
            "The user's cat is named Biscuit."
        ]

        # injected predictor failure: episodic and semantic stores untouched
        failing = dict(ORDERING_SCRIPT)
        failing["rules"] = [
            r for r in ORDERING_SCRIPT["rules"] if r["role"] != "episode_predictor"
        ] + [
            {"role": "episode_predictor", "failure_mode": "transport_error"}
            for _ in range(3)
        ]
        engine3 = _ordering_engine(tmp_path, failing)
        for i, text in enumerate(["Biscuit is asleep.", "Biscuit is still asleep."]):
            engine3.append_message("u-fail", msg(text, i))
        engine3.flush_session("u-fail")
        engine3.drain("u-fail")
        records = engine3.cycle_records("u-fail")
        assert [r.status for r in records] == [CycleStatus.FAILED]
        assert len(engine3.episodes("u-fail")) == 1  # stored by the handoff, untouched
        assert engine3.facts("u-fail") == []


def test_metric_correctness():
    """Hand-computed metric values at their stated tolerances."""
    with criterion("metric-correctness (F1 exact, BLEU-1 +-1e-4)"):
        assert token_f1("the red apple", "red apple") == pytest.approx(0.8, abs=1e-12)
        assert bleu1("the red apple", "red apple") == pytest.approx(0.6667, abs=1e-4)
        assert bleu1("red", "red apple") == pytest.approx(0.3679, abs=1e-4)
        assert token_f1("same words", "same words") == 1.0
        assert bleu1("same words", "same words") == 1.0


def test_context_assembly_recipe():
    """k=10 context: <=10 episodes, <=20 facts, exactly min(2, n) raw transcripts."""
    with criterion("context-assembly-recipe (10/20/top-2)"):
        engine = MemoryEngine(LLMGateway(load_script(SCRIPT)))
        engine.ingest(load_transcript(TRANSCRIPT))
        assert engine.config.top_k_episodes == 10 and engine.config.top_m_facts == 20
        for query in (REPLAY_QUERY, "Which marathon did Alice run and when?", "lease?"):
            context = engine.search("alice", query)
            assert len(context.episodes) <= 10
            assert len(context.facts) <= 20
            raw = [e for e in context.episodes if e.include_raw_text]
            assert len(raw) == min(2, len(context.episodes))
            assert [e.include_raw_text for e in context.episodes[:len(raw)]] == [True] * len(raw)


def test_persistence_round_trip(tmp_path):
    """Save/load reproduces bit-exact retrieval for 20 random queries."""
    with criterion("persistence-round-trip (20 queries, bit-exact)"):
        store = tmp_path / "store"
        live = MemoryEngine(LLMGateway(load_script(SCRIPT)), store_root=str(store))
        live.ingest(load_transcript(TRANSCRIPT))
        live.close()  # closes file handles; the in-memory state stays queryable
        reloaded = MemoryEngine(LLMGateway(load_script(SCRIPT)), store_root=str(store))

        rng = random.Random(77)
        words = ("marathon", "orchard", "lease", "camera", "italy", "bread", "jon",
                 "offer", "hike", "book", "alice", "training", "july", "june")
        for _ in range(20):
            query = " ".join(rng.sample(words, 4))
            live_ctx = live.search("alice", query)
            reload_ctx = reloaded.search("alice", query)
            live_pairs = [(e.episode.id, e.similarity) for e in live_ctx.episodes] + [
                (f.fact.id, f.similarity) for f in live_ctx.facts
            ]
            reload_pairs = [(e.episode.id, e.similarity) for e in reload_ctx.episodes] + [
                (f.fact.id, f.similarity) for f in reload_ctx.facts
            ]
            assert live_pairs == reload_pairs  # float equality, no tolerance
            assert live_ctx.rendered == reload_ctx.rendered
        reloaded.close()


def test_token_economy(tmp_path):
    """Replay-fixture context uses <30% of the full-transcript token estimate."""
    with criterion("token-economy (<30% of full transcript)"):
        transcript = load_transcript(TRANSCRIPT)
        all_messages = [m for s in transcript.sessions for m in s.messages]
        full_tokens = default_token_estimate(render_transcript(all_messages))
        assert full_tokens > 2000, "fixture must exceed 2,000 estimated tokens"
        engine = MemoryEngine(LLMGateway(load_script(SCRIPT)))
        engine.ingest(transcript)
        context = engine.search("alice", REPLAY_QUERY)
        ratio = context.token_estimate / full_tokens
        print(f"  [token-economy] context={context.token_estimate} "
              f"full={full_tokens} ratio={ratio:.3f}")
        assert ratio < 0.30
