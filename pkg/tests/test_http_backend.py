import json

import httpx
import pytest

from memoir.gateway import ChatRequest, GatewayError, RoleTag, TransportError
from memoir.gateway.http import HttpBackend, HttpBackendConfig

BASE = "https://llm.example/v1"


def backend_with(handler) -> HttpBackend:
    client = httpx.Client(transport=httpx.MockTransport(handler), base_url=BASE)
    return HttpBackend(HttpBackendConfig(base_url=BASE), client=client)


def chat_req(role: RoleTag = RoleTag.ANSWERER) -> ChatRequest:
    return ChatRequest(role_tag=role, system_prompt="sys", user_prompt="usr")


class TestChat:
    def test_happy_path_and_wire_shape(self):
        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen["path"] = request.url.path
            seen["body"] = json.loads(request.content)
            return httpx.Response(
                200, json={"choices": [{"message": {"content": "hello back"}}]}
            )

        assert backend_with(handler).chat(chat_req()) == "hello back"
        assert seen["path"].endswith("/chat/completions")
        assert seen["body"]["model"] == "gpt-4o-mini"
        assert [m["role"] for m in seen["body"]["messages"]] == ["system", "user"]

    @pytest.mark.parametrize(
        "role,temperature",
        [
            (RoleTag.BOUNDARY_DETECTOR, 0.0),
            (RoleTag.KNOWLEDGE_DISTILLER, 0.0),
            (RoleTag.EPISODE_PREDICTOR, 0.7),
        ],
    )
    def test_per_role_temperature(self, role, temperature):
        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen["body"] = json.loads(request.content)
            return httpx.Response(200, json={"choices": [{"message": {"content": "x"}}]})

        backend_with(handler).chat(chat_req(role))
        assert seen["body"]["temperature"] == temperature

    def test_per_role_model_override(self):
        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen["body"] = json.loads(request.content)
            return httpx.Response(200, json={"choices": [{"message": {"content": "x"}}]})

        config = HttpBackendConfig(base_url=BASE, model_by_role={RoleTag.JUDGE: "bigger-model"})
        client = httpx.Client(transport=httpx.MockTransport(handler), base_url=BASE)
        HttpBackend(config, client=client).chat(chat_req(RoleTag.JUDGE))
        assert seen["body"]["model"] == "bigger-model"

    @pytest.mark.parametrize("status", [429, 500, 503])
    def test_retriable_statuses(self, status):
        def handler(_request: httpx.Request) -> httpx.Response:
            return httpx.Response(status, text="nope")

        with pytest.raises(TransportError):
            backend_with(handler).chat(chat_req())

    def test_client_error_not_retriable(self):
        def handler(_request: httpx.Request) -> httpx.Response:
            return httpx.Response(401, text="bad key")

        with pytest.raises(GatewayError) as err:
            backend_with(handler).chat(chat_req())
        assert not isinstance(err.value, TransportError)

    def test_network_error_is_transport(self):
        def handler(_request: httpx.Request) -> httpx.Response:
            raise httpx.ConnectError("refused")

        with pytest.raises(TransportError):
            backend_with(handler).chat(chat_req())

    def test_malformed_payload(self):
        def handler(_request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, json={"unexpected": True})

        with pytest.raises(GatewayError):
            backend_with(handler).chat(chat_req())


class TestEmbed:
    def test_happy_path_and_dimension_discovery(self):
        def handler(request: httpx.Request) -> httpx.Response:
            body = json.loads(request.content)
            assert body == {"model": "text-embedding-3-small", "input": "some text"}
            return httpx.Response(200, json={"data": [{"embedding": [0.1, 0.2, 0.3]}]})

        backend = backend_with(handler)
        assert backend.embedding_dimension is None
        assert backend.embed("some text") == [0.1, 0.2, 0.3]
        assert backend.embedding_dimension == 3

    def test_empty_text_rejected(self):
        def handler(_request: httpx.Request) -> httpx.Response:  # pragma: no cover
            raise AssertionError("should not be called")

        with pytest.raises(ValueError):
            backend_with(handler).embed("")
