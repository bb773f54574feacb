"""Live backend speaking the de-facto OpenAI-compatible HTTP shape.

Works against any server exposing POST {base_url}/chat/completions and
POST {base_url}/embeddings with bearer-token auth. Retries live one level
up in LLMGateway; this class maps HTTP failures onto TransportError.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import httpx

from .base import ChatRequest, GatewayError, RoleTag, TransportError

# Deterministic classification stays greedy-ish; forecasting stays creative.
DEFAULT_TEMPERATURES: dict[RoleTag, float] = {
    RoleTag.BOUNDARY_DETECTOR: 0.0,
    RoleTag.KNOWLEDGE_DISTILLER: 0.0,
    RoleTag.EPISODE_PREDICTOR: 0.7,
}


@dataclass
class HttpBackendConfig:
    base_url: str = "https://api.openai.com/v1"
    chat_model: str = "gpt-4o-mini"
    embedding_model: str = "text-embedding-3-small"
    api_key_env: str = "MEMOIR_API_KEY"
    timeout_seconds: float = 60.0
    model_by_role: dict[RoleTag, str] = field(default_factory=dict)
    temperature_by_role: dict[RoleTag, float] = field(default_factory=dict)

    def model_for(self, role: RoleTag) -> str:
        return self.model_by_role.get(role, self.chat_model)

    def temperature_for(self, role: RoleTag) -> float:
        if role in self.temperature_by_role:
            return self.temperature_by_role[role]
        return DEFAULT_TEMPERATURES.get(role, 0.0)


class HttpBackend:
    deterministic = False

    def __init__(self, config: HttpBackendConfig | None = None, client: httpx.Client | None = None):
        self.config = config or HttpBackendConfig()
        api_key = os.environ.get(self.config.api_key_env, "")
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(
            base_url=self.config.base_url.rstrip("/"),
            headers=headers,
            timeout=self.config.timeout_seconds,
        )
        self._dim: int | None = None

    @property
    def embedding_dimension(self) -> int | None:
        # Unknown until the first embedding comes back.
        return self._dim

    def _post(self, path: str, payload: dict) -> dict:
        try:
            response = self._client.post(path, json=payload)
        except httpx.HTTPError as exc:
            raise TransportError(f"request to {path} failed: {exc}") from exc
        if response.status_code >= 500 or response.status_code == 429:
            raise TransportError(f"{path} returned {response.status_code}")
        if response.status_code >= 400:
            raise GatewayError(f"{path} returned {response.status_code}: {response.text[:200]}")
        return response.json()

    def chat(self, request: ChatRequest) -> str:
        payload = {
            "model": self.config.model_for(request.role_tag),
            "temperature": self.config.temperature_for(request.role_tag),
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
        }
        data = self._post("/chat/completions", payload)
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed chat completion payload: {data!r:.200}") from exc

    def embed(self, text: str) -> list[float]:
        if not text:
            raise ValueError("cannot embed empty text")
        data = self._post("/embeddings", {"model": self.config.embedding_model, "input": text})
        try:
            vector = [float(x) for x in data["data"][0]["embedding"]]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed embedding payload: {data!r:.200}") from exc
        if self._dim is None:
            self._dim = len(vector)
        return vector

    def close(self) -> None:
        self._client.close()
