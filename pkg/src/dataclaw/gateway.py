"""HTTP service: channel webhooks, the management REST API, and SSE streams.

The webhook accepts a Telegram-compatible update subset and answers 202
immediately; the turn itself runs asynchronously on the session's worker
thread. Event streams honor `?verbosity=` and the Last-Event-ID header
for resume.
"""

from __future__ import annotations

import os

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from .core import (
    AgentConfig,
    CapacityExceeded,
    ClosedSession,
    ConfigError,
    UnknownSession,
    Verbosity,
    serialize_config,
)
from .memory import AGENTS_FILE, MEMORY_FILE, SOULS_FILE
from .runtime import AgentRuntime, ChannelConfig, TurnInProgress
from .stream import SubscriptionClosed, encode_sse

HEARTBEAT_SECONDS = 15.0
_POLL_SECONDS = 0.2

_MEMORY_FILES = {"memory": MEMORY_FILE, "agents": AGENTS_FILE, "souls": SOULS_FILE}

_SECRET_HEADERS = ("x-webhook-secret", "x-telegram-bot-api-secret-token")


def _error(status: int, detail: str) -> JSONResponse:
    return JSONResponse({"detail": detail}, status_code=status)


def _parse_update(body: dict) -> tuple[str, str, str]:
    """Normalize a webhook update to (chat_id, user_id, text)."""
    if not isinstance(body, dict):
        raise ValueError("update must be a JSON object")
    message = body.get("message")
    if not isinstance(message, dict):
        raise ValueError("update has no message object")
    chat = message.get("chat")
    if not isinstance(chat, dict) or "id" not in chat:
        raise ValueError("message has no chat.id")
    text = message.get("text")
    if not isinstance(text, str) or not text:
        raise ValueError("message has no text")
    user = message.get("from") or {}
    return str(chat["id"]), str(user.get("id", "")), text


def _sse_body(runtime: AgentRuntime, session_id: str, verbosity: Verbosity, from_seq: int):
    sub = runtime.bus.subscribe(session_id, verbosity, from_seq)

    def generate():
        idle = 0.0
        try:
            while True:
                try:
                    event = sub.get(timeout=_POLL_SECONDS)
                except SubscriptionClosed:
                    return
                if event is None:
                    idle += _POLL_SECONDS
                    if idle >= HEARTBEAT_SECONDS:
                        idle = 0.0
                        yield b": ping\n\n"
                    else:
                        # zero-length chunk: invisible on the wire, but gives
                        # the server a cancellation point while we idle
                        yield b""
                    continue
                idle = 0.0
                yield encode_sse(event)
        finally:
            runtime.bus.unsubscribe(sub)

    return generate()


def build_app(runtime: AgentRuntime, console_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="dataclaw", docs_url=None, redoc_url=None)
    app.state.runtime = runtime

    # -- channels ------------------------------------------------------------

    @app.post("/api/channels/{channel_id}/webhook")
    async def webhook(channel_id: str, request: Request):
        channel = runtime.channels.get(channel_id)
        if channel is None or not channel.enabled:
            return _error(404, f"unknown or disabled channel {channel_id}")
        if channel.inbound_secret:
            provided = next(
                (request.headers.get(h) for h in _SECRET_HEADERS if request.headers.get(h)),
                None,
            )
            if provided != channel.inbound_secret:
                return _error(401, "bad or missing webhook secret")
        try:
            body = await request.json()
            chat_id, _user_id, text = _parse_update(body)
        except ValueError as exc:
            return _error(400, f"malformed update: {exc}")
        try:
            session = runtime.session_for_chat(channel_id, chat_id)
        except CapacityExceeded as exc:
            return _error(503, str(exc))
        try:
            runtime.submit_turn(session.id, text)
        except TurnInProgress as exc:
            return _error(429, str(exc))
        except ClosedSession as exc:
            return _error(409, str(exc))
        return JSONResponse({"session_id": session.id, "accepted": True}, status_code=202)

    @app.get("/api/channels")
    async def list_channels():
        return {"channels": [c.to_dict() for c in runtime.channels.values()]}

    @app.post("/api/channels")
    async def create_channel(request: Request):
        body = await request.json()
        try:
            channel = _channel_from(body)
        except (TypeError, KeyError, ValueError) as exc:
            return _error(400, f"bad channel config: {exc}")
        if channel.channel_id in runtime.channels:
            return _error(409, f"channel {channel.channel_id} already exists")
        try:
            runtime.channels[channel.channel_id] = channel.validate()
        except Exception as exc:
            return _error(400, str(exc))
        return JSONResponse(channel.to_dict(), status_code=201)

    @app.put("/api/channels/{channel_id}")
    async def update_channel(channel_id: str, request: Request):
        existing = runtime.channels.get(channel_id)
        if existing is None:
            return _error(404, f"unknown channel {channel_id}")
        body = await request.json()
        merged = {**existing.to_dict(), **body, "channel_id": channel_id}
        try:
            channel = _channel_from(merged).validate()
        except Exception as exc:
            return _error(400, str(exc))
        runtime.channels[channel_id] = channel
        return channel.to_dict()

    @app.delete("/api/channels/{channel_id}")
    async def delete_channel(channel_id: str):
        if channel_id not in runtime.channels:
            return _error(404, f"unknown channel {channel_id}")
        del runtime.channels[channel_id]
        return Response(status_code=204)

    # -- sessions --------------------------------------------------------------

    @app.get("/api/sessions")
    async def list_sessions():
        return {"sessions": [s.to_dict() for s in runtime.sessions.all()]}

    @app.post("/api/sessions")
    async def create_session(request: Request):
        body = await request.json()
        channel_id = body.get("channel_id", "console") if isinstance(body, dict) else "console"
        if channel_id not in runtime.channels:
            return _error(400, f"unknown channel {channel_id}")
        try:
            session = runtime.new_session(channel_id)
        except CapacityExceeded as exc:
            return _error(409, str(exc))
        return JSONResponse(session.to_dict(), status_code=201)

    @app.get("/api/sessions/{session_id}")
    async def get_session(session_id: str):
        try:
            return runtime.sessions.get(session_id).to_dict()
        except UnknownSession as exc:
            return _error(404, str(exc))

    @app.delete("/api/sessions/{session_id}")
    async def close_session(session_id: str):
        try:
            runtime.close_session(session_id)
        except UnknownSession as exc:
            return _error(404, str(exc))
        return Response(status_code=204)

    @app.post("/api/sessions/{session_id}/messages")
    async def post_message(session_id: str, request: Request):
        try:
            body = await request.json()
        except Exception:
            return _error(400, "body must be JSON")
        text = body.get("text") if isinstance(body, dict) else None
        if not isinstance(text, str) or not text:
            return _error(400, "body must carry a non-empty text field")
        try:
            runtime.sessions.get(session_id)
            runtime.submit_turn(session_id, text)
        except UnknownSession as exc:
            return _error(404, str(exc))
        except TurnInProgress as exc:
            return _error(429, str(exc))
        except ClosedSession as exc:
            return _error(409, str(exc))
        return JSONResponse({"accepted": True}, status_code=202)

    @app.post("/api/sessions/{session_id}/cancel")
    async def cancel_session(session_id: str):
        try:
            runtime.cancel(session_id)
        except UnknownSession as exc:
            return _error(404, str(exc))
        return JSONResponse({"cancelled": True}, status_code=202)

    @app.get("/api/sessions/{session_id}/events")
    async def session_events(session_id: str, request: Request, verbosity: str | None = None):
        try:
            runtime.sessions.get(session_id)
        except UnknownSession as exc:
            return _error(404, str(exc))
        level = runtime.config.verbosity
        if verbosity is not None:
            try:
                level = Verbosity(verbosity)
            except ValueError:
                return _error(400, f"bad verbosity {verbosity!r}")
        from_seq = 0
        last_id = request.headers.get("last-event-id")
        if last_id:
            try:
                from_seq = int(last_id)
            except ValueError:
                return _error(400, f"bad Last-Event-ID {last_id!r}")
        return StreamingResponse(
            _sse_body(runtime, session_id, level, from_seq),
            media_type="text/event-stream",
            headers={"Cache-Control": "no-cache"},
        )

    # -- config ------------------------------------------------------------------

    @app.get("/api/config")
    async def get_config():
        return runtime.config.to_dict()

    @app.put("/api/config")
    async def put_config(request: Request):
        body = await request.json()
        if not isinstance(body, dict):
            return _error(400, "config body must be an object")
        merged = {**runtime.config.to_dict(), **body}
        try:
            if isinstance(merged.get("verbosity"), str):
                merged["verbosity"] = Verbosity(merged["verbosity"])
            config = AgentConfig(**merged).validate()
        except (ConfigError, TypeError, ValueError) as exc:
            return _error(400, f"invalid config: {exc}")
        runtime.update_config(config)
        try:
            with open(runtime.workspace.config_path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(serialize_config(config))
        except OSError as exc:
            return _error(500, f"config applied but not persisted: {exc}")
        return config.to_dict()

    # -- skills --------------------------------------------------------------------

    @app.get("/api/skills")
    async def list_skills():
        bundles, stamp = runtime.skills.active()
        return {"skills": [b.to_dict() for b in bundles], "stamp": stamp}

    @app.post("/api/skills/rescan")
    async def rescan_skills():
        return runtime.skills.scan().to_dict()

    # -- memory files -----------------------------------------------------------------

    @app.get("/api/memory/{which}")
    async def get_memory(which: str):
        name = _MEMORY_FILES.get(which)
        if name is None:
            return _error(404, f"unknown memory file {which!r}")
        return PlainTextResponse(runtime.global_memory.read_file(name))

    @app.put("/api/memory/{which}")
    async def put_memory(which: str, request: Request):
        name = _MEMORY_FILES.get(which)
        if name is None:
            return _error(404, f"unknown memory file {which!r}")
        text = (await request.body()).decode("utf-8")
        runtime.global_memory.write_file(name, text)
        return {"written": len(text)}

    # -- status and artifacts ------------------------------------------------------------

    @app.get("/api/status")
    async def status():
        return runtime.status()

    @app.get("/api/artifacts/{artifact_id}")
    async def get_artifact(artifact_id: str):
        artifact = runtime.artifacts.get(artifact_id)
        if artifact is None:
            return _error(404, f"unknown artifact {artifact_id}")
        data = runtime.artifacts.read_bytes(artifact)
        return Response(content=data, media_type=artifact.media_type)

    # -- console -----------------------------------------------------------------------

    if console_dir and os.path.isdir(console_dir):
        app.mount("/console", StaticFiles(directory=console_dir, html=True), name="console")

    return app


def _channel_from(body: dict) -> ChannelConfig:
    return ChannelConfig(
        channel_id=str(body["channel_id"]),
        kind=str(body.get("kind", "webhook_im")),
        inbound_secret=body.get("inbound_secret"),
        outbound_url=str(body.get("outbound_url", "") or ""),
        enabled=bool(body.get("enabled", True)),
    )
