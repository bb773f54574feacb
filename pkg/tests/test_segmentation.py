import itertools
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memoir.gateway import LLMGateway, RoleTag, ScriptedBackend, ScriptedRule, TransportError
from memoir.model import BoundaryDecision, EngineConfig, MessageBuffer
from memoir.segmentation import (
    DETECTOR_RECENT_WINDOW,
    Segmenter,
    TriggerCause,
    detect_boundary,
    should_trigger,
)

from conftest import boundary_json, boundary_rule, make_gateway, msg


class TestShouldTrigger:
    def test_semantic_boundary(self, cfg):
        assert should_trigger(BoundaryDecision(True, 0.8), 5, cfg) == (
            True,
            TriggerCause.SEMANTIC_BOUNDARY,
        )

    def test_strict_inequality_at_threshold(self, cfg):
        assert should_trigger(BoundaryDecision(True, 0.7), 5, cfg) == (False, TriggerCause.NONE)

    def test_buffer_full(self, cfg):
        assert should_trigger(BoundaryDecision(False, 0.99), 25, cfg) == (
            True,
            TriggerCause.BUFFER_FULL,
        )

    def test_neither(self, cfg):
        assert should_trigger(BoundaryDecision(False, 0.0), 1, cfg) == (False, TriggerCause.NONE)

    def test_buffer_full_takes_precedence(self, cfg):
        triggered, cause = should_trigger(BoundaryDecision(True, 0.99), 26, cfg)
        assert triggered and cause == TriggerCause.BUFFER_FULL

    def test_exhaustive_truth_table(self, cfg):
        """Every (b, c, len) grid cell must match the trigger formula exactly."""
        grid = itertools.product(
            (True, False), (0.0, 0.69, 0.7, 0.71, 1.0), (0, 1, 24, 25, 26)
        )
        for b, c, length in grid:
            expected = (b and c > 0.7) or (length >= 25)
            triggered, cause = should_trigger(BoundaryDecision(b, c), length, cfg)
            assert triggered == expected, (b, c, length)
            if length >= 25:
                assert cause == TriggerCause.BUFFER_FULL
            elif expected:
                assert cause == TriggerCause.SEMANTIC_BOUNDARY
            else:
                assert cause == TriggerCause.NONE

    def test_negative_length_rejected(self, cfg):
        with pytest.raises(ValueError):
            should_trigger(BoundaryDecision(False, 0.0), -1, cfg)


class TestDetectBoundary:
    def test_empty_buffer_no_call(self):
        gateway = make_gateway(strict=True)  # any call would raise ScriptError
        decision = detect_boundary(msg("first"), MessageBuffer(user_id="u1"), gateway)
        assert decision == BoundaryDecision(False, 0.0)
        assert len(gateway.call_log) == 0

    def test_scripted_echo(self):
        gateway = make_gateway(rules=[boundary_rule("new msg", True, 0.9)])
        buffer = MessageBuffer(user_id="u1").with_message(msg("old", 0))
        decision = detect_boundary(msg("new msg", 1), buffer, gateway)
        assert (decision.is_boundary, decision.confidence) == (True, 0.9)

    def test_out_of_range_confidence_clamped(self):
        gateway = make_gateway(rules=[boundary_rule("new msg", True, 1.7)])
        buffer = MessageBuffer(user_id="u1").with_message(msg("old", 0))
        decision = detect_boundary(msg("new msg", 1), buffer, gateway)
        assert decision.confidence == 1.0
        assert decision.clamped

    def test_parse_failure_retries_then_degrades(self):
        backend = ScriptedBackend(
            rules=[
                ScriptedRule(RoleTag.BOUNDARY_DETECTOR, response="not json at all"),
                ScriptedRule(RoleTag.BOUNDARY_DETECTOR, response="still not json"),
            ]
        )
        gateway = LLMGateway(backend)
        buffer = MessageBuffer(user_id="u1").with_message(msg("old", 0))
        decision = detect_boundary(msg("new", 1), buffer, gateway)
        assert decision == BoundaryDecision(False, 0.0, degraded=True)
        assert len(gateway.call_log.records(kind="chat")) == 2

    def test_parse_failure_then_success_on_retry(self):
        backend = ScriptedBackend(
            rules=[
                ScriptedRule(RoleTag.BOUNDARY_DETECTOR, failure_mode="malformed"),
                ScriptedRule(RoleTag.BOUNDARY_DETECTOR, response=boundary_json(True, 0.8)),
            ]
        )
        decision = detect_boundary(
            msg("new", 1),
            MessageBuffer(user_id="u1").with_message(msg("old", 0)),
            LLMGateway(backend),
        )
        assert (decision.is_boundary, decision.confidence) == (True, 0.8)

    def test_long_buffer_truncated_in_prompt(self):
        gateway = make_gateway(
            defaults={RoleTag.BOUNDARY_DETECTOR: boundary_json(False, 0.0)}
        )
        buffer = MessageBuffer(user_id="u1")
        for i in range(60):
            buffer = buffer.with_message(msg("x" * 300, i))
        detect_boundary(msg("new message", 61), buffer, gateway)
        prompt = gateway.call_log.records(kind="chat")[0].prompt
        assert "omitted for length" in prompt
        # only the recent window is shown verbatim
        assert prompt.count("] user:") <= DETECTOR_RECENT_WINDOW + 1


class TestSegmenterAppend:
    def test_semantic_flush_excludes_new_message(self, cfg):
        gateway = make_gateway(
            rules=[boundary_rule("m6", True, 0.9)],
            defaults={RoleTag.BOUNDARY_DETECTOR: boundary_json(False, 0.0)},
        )
        segmenter = Segmenter(gateway, cfg)
        for i in range(5):
            outcome = segmenter.append_message("u1", msg(f"m{i + 1}", i))
            assert not outcome.triggered
        outcome = segmenter.append_message("u1", msg("m6", 5))
        assert outcome.triggered
        assert outcome.trigger_cause == TriggerCause.SEMANTIC_BOUNDARY
        assert [m.content for m in outcome.segment] == ["m1", "m2", "m3", "m4", "m5"]
        assert [m.content for m in segmenter.buffer_snapshot("u1")] == ["m6"]

    def test_buffer_full_flush_includes_new_message(self, cfg):
        gateway = make_gateway(defaults={RoleTag.BOUNDARY_DETECTOR: boundary_json(False, 0.1)})
        segmenter = Segmenter(gateway, cfg)
        for i in range(24):
            assert not segmenter.append_message("u1", msg(f"m{i + 1}", i)).triggered
        outcome = segmenter.append_message("u1", msg("m25", 24))
        assert outcome.triggered
        assert outcome.trigger_cause == TriggerCause.BUFFER_FULL
        assert len(outcome.segment) == 25
        assert outcome.segment[-1].content == "m25"
        assert segmenter.buffer_snapshot("u1") == ()

    def test_first_message_starts_buffer(self, cfg):
        segmenter = Segmenter(make_gateway(strict=True), cfg)
        outcome = segmenter.append_message("u1", msg("m1"))
        assert not outcome.triggered
        assert [m.content for m in segmenter.buffer_snapshot("u1")] == ["m1"]

    def test_provider_error_leaves_buffer_unchanged(self, cfg):
        rules = [
            ScriptedRule(RoleTag.BOUNDARY_DETECTOR, failure_mode="transport_error")
            for _ in range(3)
        ]
        segmenter = Segmenter(make_gateway(rules=rules, strict=True), cfg)
        segmenter.append_message("u1", msg("m1", 0))
        with pytest.raises(TransportError):
            segmenter.append_message("u1", msg("m2", 1))
        assert [m.content for m in segmenter.buffer_snapshot("u1")] == ["m1"]


class TestFlushSession:
    def test_flush_emits_buffer(self, cfg):
        segmenter = Segmenter(make_gateway(), cfg)
        segmenter.append_message("u1", msg("m1", 0))
        segmenter.append_message("u1", msg("m2", 1))
        outcome = segmenter.flush_session("u1")
        assert outcome.triggered
        assert outcome.trigger_cause == TriggerCause.SESSION_END
        assert [m.content for m in outcome.segment] == ["m1", "m2"]

    def test_flush_empty_and_idempotent(self, cfg):
        segmenter = Segmenter(make_gateway(), cfg)
        assert not segmenter.flush_session("u1").triggered
        segmenter.append_message("u1", msg("m1"))
        assert segmenter.flush_session("u1").triggered
        assert not segmenter.flush_session("u1").triggered


class TestConservation:
    """No message is ever lost or duplicated across segments plus buffers."""

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.integers(min_value=0, max_value=4),  # user
                st.integers(min_value=0, max_value=9),  # 0 => boundary marker
                st.booleans(),  # interleave a flush
            ),
            min_size=1,
            max_size=120,
        )
    )
    def test_random_interleavings(self, events):
        cfg = EngineConfig(max_buffer_size=7)
        gateway = make_gateway(
            rules=[
                boundary_rule("#boundary#", True, 0.95, once=False)
            ],
            defaults={RoleTag.BOUNDARY_DETECTOR: boundary_json(False, 0.0)},
        )
        segmenter = Segmenter(gateway, cfg)
        appended: Counter = Counter()
        emitted: Counter = Counter()
        counters = {u: 0 for u in range(5)}
        for user, kind, flush in events:
            user_id = f"user-{user}"
            counters[user] += 1
            marker = "#boundary#" if kind == 0 else "plain"
            content = f"{user_id} msg {counters[user]} {marker}"
            appended[(user_id, content)] += 1
            outcome = segmenter.append_message(user_id, msg(content, counters[user]))
            if outcome.triggered:
                for m in outcome.segment:
                    emitted[(user_id, m.content)] += 1
            if flush:
                outcome = segmenter.flush_session(user_id)
                if outcome.triggered:
                    for m in outcome.segment:
                        emitted[(user_id, m.content)] += 1
        for user in range(5):
            user_id = f"user-{user}"
            outcome = segmenter.flush_session(user_id)
            if outcome.triggered:
                for m in outcome.segment:
                    emitted[(user_id, m.content)] += 1
        assert emitted == appended

    def test_users_do_not_share_buffers(self, cfg):
        segmenter = Segmenter(make_gateway(), cfg)
        segmenter.append_message("u1", msg("one"))
        segmenter.append_message("u2", msg("two"))
        assert [m.content for m in segmenter.buffer_snapshot("u1")] == ["one"]
        assert [m.content for m in segmenter.buffer_snapshot("u2")] == ["two"]
