"""HTTP service: sessions, synchronous chat turns, live SSE event streams,
and trace exports.

Turn execution runs in the threadpool (sync endpoints) so event streaming
stays live while a turn is in flight. SSE ids equal trace seq, which is
what makes reconnect-with-resume exact.
"""

from __future__ import annotations

import asyncio
import json
from typing import Optional

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import Response, StreamingResponse
from pydantic import BaseModel

from ..runtime import Runtime
from ..trace import SessionNotFoundError

POLL_SECONDS = 0.05


class CreateSessionBody(BaseModel):
    session_id: Optional[str] = None


class MessageBody(BaseModel):
    text: str


def create_app(runtime: Runtime) -> FastAPI:
    app = FastAPI(title="sciassist gateway")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "fingerprint": runtime.config.fingerprint}

    @app.post("/sessions", status_code=201)
    def create_session(body: Optional[CreateSessionBody] = None) -> dict:
        session_id = body.session_id if body else None
        try:
            descriptor = runtime.create_session(session_id)
        except ValueError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return descriptor.to_dict()

    @app.post("/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageBody) -> dict:
        # Turn failures still return a TurnResult; only unknown sessions 404.
        try:
            result = runtime.post_message(session_id, body.text)
        except SessionNotFoundError:
            raise HTTPException(status_code=404, detail=f"unknown session: {session_id}")
        return result.to_dict()

    @app.get("/sessions/{session_id}/events")
    async def stream_events(
        session_id: str,
        request: Request,
        from_seq: int = Query(0, alias="from", ge=0),
    ) -> StreamingResponse:
        if not runtime.hub.session_exists(session_id):
            raise HTTPException(status_code=404, detail=f"unknown session: {session_id}")

        async def generate():
            last = from_seq
            while True:
                if await request.is_disconnected():
                    return
                for evt in runtime.hub.events(session_id, last):
                    last = evt.seq
                    data = json.dumps(evt.to_dict(), sort_keys=True, ensure_ascii=False)
                    yield f"id: {evt.seq}\nevent: {evt.phase}\ndata: {data}\n\n"
                await asyncio.sleep(POLL_SECONDS)

        return StreamingResponse(generate(), media_type="text/event-stream")

    @app.get("/sessions/{session_id}/export")
    def export_session(session_id: str, format: str = "json") -> Response:
        if format not in ("json", "markdown"):
            raise HTTPException(status_code=400, detail="format must be json or markdown")
        try:
            document = runtime.export(session_id, format)
        except SessionNotFoundError:
            raise HTTPException(status_code=404, detail=f"unknown session: {session_id}")
        media = "application/json" if format == "json" else "text/markdown"
        return Response(content=document, media_type=media)

    return app
