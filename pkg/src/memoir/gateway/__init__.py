"""Uniform access to chat-completion and embedding capabilities.

Two backends implement the same interface: a live OpenAI-compatible HTTP
backend and a deterministic scripted backend for tests and replays. The
LLMGateway wrapper adds retry-with-backoff and an inspectable call log.
"""

from .base import (
    CallLog,
    CallRecord,
    ChatRequest,
    GatewayError,
    LLMGateway,
    ParseError,
    ResponseFormat,
    RoleTag,
    ScriptError,
    TransportError,
    extract_json_array,
    extract_json_object,
)
from .http import HttpBackend, HttpBackendConfig
from .scripted import ScriptedBackend, ScriptedRule, load_script

__all__ = [
    "CallLog",
    "CallRecord",
    "ChatRequest",
    "GatewayError",
    "HttpBackend",
    "HttpBackendConfig",
    "LLMGateway",
    "ParseError",
    "ResponseFormat",
    "RoleTag",
    "ScriptError",
    "ScriptedBackend",
    "ScriptedRule",
    "TransportError",
    "extract_json_array",
    "extract_json_object",
    "load_script",
]
