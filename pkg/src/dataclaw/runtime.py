"""Service assembly: session lifecycle, turn execution, channels, delivery.

One AgentRuntime owns the workspace, the session table, the event bus, the
skill manager, and the tool registry. Turns run on per-session worker
threads; different sessions execute fully in parallel, one turn at a time
per session.
"""

from __future__ import annotations

import collections
import functools
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

import requests

from . import engine
from .core import (
    AgentConfig,
    AgentEvent,
    ChatMessage,
    ClosedSession,
    DataClawError,
    EventKind,
    Role,
    Session,
    SessionStatus,
    SessionTable,
    UnknownSession,
    new_id,
    utc_now_iso,
)
from .llm import Backend, summarize
from .memory import DataMemory, GlobalMemoryEntry, GlobalMemoryStore
from .persist import ArtifactStore, TranscriptWriter, WorkspaceLayout
from .skills import SkillManager, match_active_skills
from .stream import EventBus
from .tools import DatasetStore, ToolContext, build_builtin_registry

logger = logging.getLogger(__name__)


class TurnInProgress(DataClawError):
    """The session already has an in-flight turn."""


class DeliveryFailed(DataClawError):
    """Outbound delivery gave up after exhausting its retries."""


RETRY_BACKOFF_SECONDS = (1.0, 2.0, 4.0)


# ---------------------------------------------------------------------------
# Channels
# ---------------------------------------------------------------------------

@dataclass
class ChannelConfig:
    channel_id: str
    kind: str  # webhook_im | loopback | console
    inbound_secret: str | None = None
    outbound_url: str = ""
    enabled: bool = True

    def validate(self) -> "ChannelConfig":
        if self.kind not in ("webhook_im", "loopback", "console"):
            raise DataClawError(f"unknown channel kind {self.kind!r}")
        if self.kind == "webhook_im" and not self.outbound_url:
            raise DataClawError("webhook_im channels require an outbound_url")
        return self

    def to_dict(self) -> dict:
        return {
            "channel_id": self.channel_id,
            "kind": self.kind,
            "inbound_secret": self.inbound_secret,
            "outbound_url": self.outbound_url,
            "enabled": self.enabled,
        }


@dataclass
class OutboundMessage:
    channel_id: str
    chat_id: str
    text: str
    attachments: list = field(default_factory=list)


@dataclass
class DeliveryRecord:
    channel_id: str
    chat_id: str
    ok: bool
    attempts: int
    retries: int
    error: str = ""
    delivered_at: str = ""

    def to_dict(self) -> dict:
        return {
            "channel_id": self.channel_id,
            "chat_id": self.chat_id,
            "ok": self.ok,
            "attempts": self.attempts,
            "retries": self.retries,
            "error": self.error,
            "delivered_at": self.delivered_at,
        }


# ---------------------------------------------------------------------------
# Per-session state
# ---------------------------------------------------------------------------

class SessionState:
    """Single-owner mutable state behind one session."""

    def __init__(self, session: Session, runtime: "AgentRuntime") -> None:
        self.session = session
        self.memory = DataMemory(session_id=session.id)
        self.datasets = DatasetStore()
        self.transcript = TranscriptWriter(runtime.workspace, session.id)
        self.tool_ctx = ToolContext(
            session_id=session.id,
            workspace=runtime.workspace,
            datasets=self.datasets,
            global_memory=runtime.global_memory,
            artifact_store=runtime.artifacts,
        )
        self.next_seq = 1
        self.busy = False
        self.cancel_event = threading.Event()
        self.chat_key: tuple[str, str] | None = None
        self.lock = threading.Lock()


class _Sink:
    """Per-turn event sink: allocates seqs, fans out, and persists."""

    def __init__(self, state: SessionState, runtime: "AgentRuntime") -> None:
        self._state = state
        self._runtime = runtime

    def emit(self, kind: str, payload: dict) -> None:
        state = self._state
        event = AgentEvent(
            seq=state.next_seq,
            session_id=state.session.id,
            kind=EventKind(kind),
            payload=payload,
            timestamp=self._runtime.now(),
        )
        state.next_seq += 1
        self._runtime.bus.emit(event)
        state.transcript.append(event)
        self._runtime.note_event(event)


# ---------------------------------------------------------------------------
# Runtime
# ---------------------------------------------------------------------------

class AgentRuntime:
    """Owns all shared state and executes turns."""

    def __init__(
        self,
        workspace: WorkspaceLayout,
        config: AgentConfig,
        backend_factory: Callable[[Session], Backend],
        *,
        now: Callable[[], str] = utc_now_iso,
        new_id: Callable[[], str] = new_id,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.workspace = workspace
        self.now = now
        self.new_id = new_id
        self.sleep = sleep
        self.backend_factory = backend_factory

        self._config = config.validate()
        self._config_lock = threading.Lock()

        self.bus = EventBus()
        self.sessions = SessionTable(config.max_concurrent_sessions, new_id=new_id, now=now)
        self.registry = build_builtin_registry()
        self.skills = SkillManager(workspace.root, workspace.skills_dir, self.registry)
        self.global_memory = GlobalMemoryStore(workspace.root)
        self.artifacts = ArtifactStore(workspace, new_id=new_id, now=now)

        self.channels: dict[str, ChannelConfig] = {
            "loopback": ChannelConfig("loopback", "loopback"),
            "console": ChannelConfig("console", "console"),
        }
        self.loopback_outbox: list[dict] = []
        self.delivery_log: collections.deque = collections.deque(maxlen=100)
        self.recent_events: collections.deque = collections.deque(maxlen=100)

        self._states: dict[str, SessionState] = {}
        self._chat_sessions: dict[tuple[str, str], str] = {}
        self._state_lock = threading.Lock()
        self._chat_lock = threading.Lock()

        self.skills.scan()

    # -- config -------------------------------------------------------------

    @property
    def config(self) -> AgentConfig:
        with self._config_lock:
            return self._config

    def update_config(self, config: AgentConfig) -> AgentConfig:
        """Publish a new config; picked up at the next turn boundary."""
        config.validate()
        with self._config_lock:
            self._config = config
        self.sessions.set_limit(config.max_concurrent_sessions)
        return config

    # -- sessions -------------------------------------------------------------

    def new_session(self, channel_id: str) -> Session:
        session = self.sessions.new_session(channel_id)
        state = SessionState(session, self)
        with self._state_lock:
            self._states[session.id] = state
        self.bus.register_session(session.id)
        return session

    def state_of(self, session_id: str) -> SessionState:
        with self._state_lock:
            state = self._states.get(session_id)
        if state is None:
            raise UnknownSession(f"no session {session_id}")
        return state

    def session_for_chat(self, channel_id: str, chat_id: str) -> Session:
        """Affine mapping: one (channel, chat) pair always gets one session."""
        key = (channel_id, str(chat_id))
        with self._chat_lock:
            session_id = self._chat_sessions.get(key)
            if session_id is not None:
                return self.sessions.get(session_id)
            session = self.new_session(channel_id)
            self.state_of(session.id).chat_key = key
            self._chat_sessions[key] = session.id
            return session

    def close_session(self, session_id: str) -> Session:
        session = self.sessions.close(session_id)
        state = self.state_of(session_id)
        state.cancel_event.set()
        return session

    def cancel(self, session_id: str) -> None:
        self.state_of(session_id).cancel_event.set()

    # -- turns ----------------------------------------------------------------

    def submit_turn(self, session_id: str, text: str) -> threading.Thread:
        """Start a turn on its own thread; raises instead of queuing."""
        state = self._claim_turn(session_id)
        thread = threading.Thread(
            target=self._run_claimed_turn, args=(state, text), daemon=True
        )
        thread.start()
        return thread

    def run_turn_blocking(self, session_id: str, text: str) -> engine.TurnTrace:
        state = self._claim_turn(session_id)
        return self._run_claimed_turn(state, text)

    def _claim_turn(self, session_id: str) -> SessionState:
        state = self.state_of(session_id)
        with state.lock:
            if state.session.status == SessionStatus.CLOSED:
                raise ClosedSession(f"session {session_id} is closed")
            if state.busy:
                raise TurnInProgress(f"session {session_id} already has a turn in flight")
            state.busy = True
            state.session.status = SessionStatus.RUNNING
            state.cancel_event.clear()
        return state

    def _run_claimed_turn(self, state: SessionState, text: str) -> engine.TurnTrace:
        session = state.session
        try:
            config = self.config
            self.skills.scan()
            bundles, _ = self.skills.active()
            active = match_active_skills(text, bundles)
            instructions, persona = self.global_memory.load_global_blocks()
            backend = self.backend_factory(session)
            sink = _Sink(state, self)
            user_message = ChatMessage(
                id=self.new_id(),
                session_id=session.id,
                channel_id=session.channel_id,
                role=Role.USER,
                text=text,
                timestamp=self.now(),
            )
            deps = engine.TurnDeps(
                backend=backend,
                registry=self.registry,
                tool_ctx=state.tool_ctx,
                memory=state.memory,
                config=config,
                sink=sink,
                summarizer=functools.partial(summarize, backend),
                instructions=instructions,
                persona=persona,
                active_skills=active,
                cancelled=state.cancel_event.is_set,
                now=self.now,
                new_id=self.new_id,
            )
            artifacts_before = len(state.tool_ctx.artifacts_created)
            trace = engine.run_turn(session, user_message, deps)
            new_artifacts = state.tool_ctx.artifacts_created[artifacts_before:]

            if trace.outcome == "final":
                self._record_finding(session, trace, new_artifacts)
                self._deliver_final(state, trace, new_artifacts, sink)
            return trace
        finally:
            session.turn_count += 1
            with state.lock:
                state.busy = False
                if session.status != SessionStatus.CLOSED:
                    session.status = SessionStatus.IDLE

    def _record_finding(self, session: Session, trace: engine.TurnTrace, artifacts) -> None:
        first_line = trace.final_text.splitlines()[0] if trace.final_text else ""
        text = " ".join(first_line.split())
        if artifacts:
            paths = ", ".join(a.relative_path for a in artifacts)
            text = f"{text} | artifacts: {paths}" if text else f"artifacts: {paths}"
        if not text:
            return
        try:
            self.global_memory.record_global(
                GlobalMemoryEntry(
                    session_id=session.id,
                    recorded_at=self.now(),
                    kind="finding",
                    text=text,
                )
            )
        except DataClawError as exc:
            logger.warning("could not record finding for %s: %s", session.id, exc)

    # -- delivery -------------------------------------------------------------

    def _deliver_final(self, state: SessionState, trace, artifacts, sink: _Sink) -> None:
        session = state.session
        chat_id = state.chat_key[1] if state.chat_key else session.id
        outbound = OutboundMessage(
            channel_id=session.channel_id,
            chat_id=chat_id,
            text=trace.final_text,
            attachments=list(artifacts),
        )
        try:
            self.deliver(outbound, sink=sink)
        except DeliveryFailed as exc:
            logger.warning("delivery for session %s failed: %s", session.id, exc)

    def deliver(self, outbound: OutboundMessage, sink: _Sink | None = None) -> DeliveryRecord:
        """Send a final answer (plus artifacts) back through its channel.

        Transient webhook failures retry 3 times with 1s/2s/4s backoff;
        failures are recorded and surfaced in status, never raised into
        the turn.
        """
        channel = self.channels.get(outbound.channel_id)
        if channel is None or not channel.enabled:
            record = DeliveryRecord(
                channel_id=outbound.channel_id,
                chat_id=outbound.chat_id,
                ok=False,
                attempts=0,
                retries=0,
                error="channel missing or disabled",
            )
            self.delivery_log.append(record)
            raise DeliveryFailed(record.error)

        if channel.kind == "loopback":
            self.loopback_outbox.append(
                {
                    "chat_id": outbound.chat_id,
                    "text": outbound.text,
                    "attachments": [a.to_dict() for a in outbound.attachments],
                }
            )
            record = DeliveryRecord(
                channel_id=channel.channel_id,
                chat_id=outbound.chat_id,
                ok=True,
                attempts=1,
                retries=0,
                delivered_at=self.now(),
            )
            self.delivery_log.append(record)
            return record

        if channel.kind == "console":
            # the final text is already on the stream as the turn's message
            # event; attachments surface as artifact events
            if sink is not None:
                for artifact in outbound.attachments:
                    sink.emit(
                        "artifact",
                        {
                            "artifact_id": artifact.id,
                            "path": artifact.relative_path,
                            "media_type": artifact.media_type,
                            "byte_length": artifact.byte_length,
                        },
                    )
            record = DeliveryRecord(
                channel_id=channel.channel_id,
                chat_id=outbound.chat_id,
                ok=True,
                attempts=1,
                retries=0,
                delivered_at=self.now(),
            )
            self.delivery_log.append(record)
            return record

        return self._deliver_webhook(channel, outbound)

    def _deliver_webhook(self, channel: ChannelConfig, outbound: OutboundMessage) -> DeliveryRecord:
        def text_call() -> None:
            response = requests.post(
                channel.outbound_url.rstrip("/") + "/sendMessage",
                json={"chat_id": outbound.chat_id, "text": outbound.text},
                timeout=10,
            )
            response.raise_for_status()

        attempts, error = self._with_retries(text_call)
        ok = error == ""
        if ok:
            for artifact in outbound.attachments:
                data = self.artifacts.read_bytes(artifact)

                def doc_call(artifact=artifact, data=data) -> None:
                    response = requests.post(
                        channel.outbound_url.rstrip("/") + "/sendDocument",
                        data={"chat_id": outbound.chat_id},
                        files={
                            "document": (
                                artifact.relative_path.rsplit("/", 1)[-1],
                                data,
                                artifact.media_type,
                            )
                        },
                        timeout=10,
                    )
                    response.raise_for_status()

                doc_attempts, doc_error = self._with_retries(doc_call)
                attempts += doc_attempts
                if doc_error:
                    error, ok = doc_error, False
                    break

        record = DeliveryRecord(
            channel_id=channel.channel_id,
            chat_id=outbound.chat_id,
            ok=ok,
            attempts=attempts,
            retries=max(attempts - 1, 0),
            error=error,
            delivered_at=self.now() if ok else "",
        )
        self.delivery_log.append(record)
        if not ok:
            raise DeliveryFailed(error)
        return record

    def _with_retries(self, call: Callable[[], None]) -> tuple[int, str]:
        """Run `call` with the 1s/2s/4s retry schedule; (attempts, error)."""
        attempts = 0
        error = ""
        for backoff in (None,) + RETRY_BACKOFF_SECONDS:
            if backoff is not None:
                self.sleep(backoff)
            attempts += 1
            try:
                call()
                return attempts, ""
            except requests.RequestException as exc:
                error = str(exc)
        return attempts, error

    # -- status ----------------------------------------------------------------

    def note_event(self, event: AgentEvent) -> None:
        self.recent_events.append(
            f"{event.timestamp} {event.session_id[:8]} #{event.seq} {event.kind.value}"
        )

    def status(self) -> dict:
        sessions = []
        with self._state_lock:
            states = list(self._states.values())
        for state in states:
            sessions.append(
                {
                    **state.session.to_dict(),
                    "compaction_count": state.memory.compaction_count,
                }
            )
        return {
            "active_sessions": self.sessions.active_count(),
            "capacity": self.sessions.limit,
            "sessions": sessions,
            "recent_events": list(self.recent_events),
            "deliveries": [r.to_dict() for r in self.delivery_log],
        }
