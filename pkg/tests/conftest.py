"""Shared test fixtures and builders."""

from __future__ import annotations

import json
from datetime import datetime, timedelta, timezone

import pytest

from memoir.gateway import LLMGateway, RoleTag, ScriptedBackend, ScriptedRule
from memoir.model import EngineConfig, Message, Role

BASE_TIME = datetime(2023, 6, 16, 9, 0, 0, tzinfo=timezone.utc)


def msg(content: str, index: int = 0, role: Role = Role.USER) -> Message:
    """Message factory with strictly increasing timestamps."""
    return Message(role=role, content=content, timestamp=BASE_TIME + timedelta(minutes=index))


def boundary_json(is_boundary: bool, confidence: float) -> str:
    return json.dumps({"is_boundary": is_boundary, "confidence": confidence})


def boundary_rule(contains: str, is_boundary: bool, confidence: float, **kwargs) -> ScriptedRule:
    return ScriptedRule(
        role_tag=RoleTag.BOUNDARY_DETECTOR,
        contains=contains,
        response=boundary_json(is_boundary, confidence),
        **kwargs,
    )


def make_gateway(
    rules: list[ScriptedRule] | None = None,
    defaults: dict | None = None,
    strict: bool = False,
    **backend_kwargs,
) -> LLMGateway:
    """Gateway over a scripted backend; lenient by default so unscripted
    roles degrade instead of erroring."""
    backend = ScriptedBackend(rules=rules, defaults=defaults, strict=strict, **backend_kwargs)
    return LLMGateway(backend)


@pytest.fixture
def cfg() -> EngineConfig:
    return EngineConfig()


@pytest.fixture
def quiet_gateway() -> LLMGateway:
    """Detector always says no-boundary; other roles return empty text."""
    return make_gateway(defaults={RoleTag.BOUNDARY_DETECTOR: boundary_json(False, 0.0)})
