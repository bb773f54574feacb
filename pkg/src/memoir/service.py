"""HTTP facade over a MemoryEngine.

Same semantics as the library/CLI path: a message stream POSTed here leaves
the engine in exactly the state a direct ingest would. Invalid bodies map to
400, reads on unknown users to 404, provider outages to 503.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .engine import AnswerError, MemoryEngine, UnknownUserError
from .gateway import TransportError
from .model import ModelError, Message, Role
from .semantic import DrainTimeout


class MessageBody(BaseModel):
    role: str
    content: str
    timestamp: str


class SearchBody(BaseModel):
    query: str
    k: int | None = Field(default=None, ge=1)


class AnswerBody(BaseModel):
    question: str
    k: int | None = Field(default=None, ge=1)


class DrainBody(BaseModel):
    user_id: str | None = None
    timeout: float | None = Field(default=None, gt=0)


def _page(items: list[dict], offset: int, limit: int) -> dict:
    return {
        "total": len(items),
        "offset": offset,
        "limit": limit,
        "items": items[offset : offset + limit],
    }


def create_app(engine: MemoryEngine) -> FastAPI:
    app = FastAPI(title="memoir", version="0.1.0")

    @app.exception_handler(RequestValidationError)
    async def invalid_body(_req: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.exception_handler(ModelError)
    async def invalid_model(_req: Request, exc: ModelError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(UnknownUserError)
    async def unknown_user(_req: Request, exc: UnknownUserError):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(TransportError)
    async def provider_down(_req: Request, exc: TransportError):
        return JSONResponse(status_code=503, content={"detail": str(exc)})

    @app.post("/v1/users/{user_id}/messages")
    def post_message(user_id: str, body: MessageBody):
        try:
            message = Message(role=Role(body.role), content=body.content, timestamp=body.timestamp)
        except (ModelError, ValueError) as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})
        outcome = engine.append_message(user_id, message)
        return outcome.to_json()

    @app.post("/v1/users/{user_id}/flush")
    def post_flush(user_id: str):
        return engine.flush_session(user_id).to_json()

    @app.post("/v1/users/{user_id}/search")
    def post_search(user_id: str, body: SearchBody):
        if not body.query.strip():
            return JSONResponse(status_code=400, content={"detail": "query must be non-empty"})
        return engine.search(user_id, body.query, k=body.k).to_json()

    @app.post("/v1/users/{user_id}/answer")
    def post_answer(user_id: str, body: AnswerBody):
        if not body.question.strip():
            return JSONResponse(status_code=400, content={"detail": "question must be non-empty"})
        try:
            answer, context = engine.answer(user_id, body.question, k=body.k)
        except AnswerError as exc:
            return JSONResponse(
                status_code=503,
                content={"detail": str(exc), "context": exc.context.to_json()},
            )
        return {"answer": answer, "context": context.to_json()}

    @app.post("/v1/admin/drain")
    def post_drain(body: DrainBody | None = None):
        body = body or DrainBody()
        try:
            engine.drain(body.user_id, body.timeout)
        except DrainTimeout as exc:
            return JSONResponse(
                status_code=504,
                content={"detail": str(exc), "stuck_cycle_ids": exc.stuck_cycle_ids},
            )
        return {"drained": True}

    @app.get("/v1/users/{user_id}/episodes")
    def get_episodes(user_id: str, offset: int = 0, limit: int = 50):
        if not engine.known_user(user_id):
            raise UnknownUserError(f"unknown user {user_id!r}")
        items = []
        for episode in engine.episodes(user_id):
            data = episode.to_json()
            data.pop("embedding")  # listing is for inspection, vectors stay internal
            items.append(data)
        return _page(items, offset, limit)

    @app.get("/v1/users/{user_id}/facts")
    def get_facts(user_id: str, offset: int = 0, limit: int = 50):
        if not engine.known_user(user_id):
            raise UnknownUserError(f"unknown user {user_id!r}")
        items = []
        for fact in engine.facts(user_id):
            data = fact.to_json()
            data.pop("embedding")
            items.append(data)
        return _page(items, offset, limit)

    return app
