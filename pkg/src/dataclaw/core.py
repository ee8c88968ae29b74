"""Core domain types shared by every other module.

Holds the conversation/event/artifact value types, the agent configuration
with its file and environment-variable loaders, the session table, and the
workspace path sandbox that confines all file access.
"""

from __future__ import annotations

import os
import re
import threading
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from typing import Callable, Mapping


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class DataClawError(Exception):
    """Base class for all errors raised by this package."""


class CapacityExceeded(DataClawError):
    """The concurrent-session limit has been reached."""


class PathEscape(DataClawError):
    """A path resolved outside the workspace root."""


class ConfigError(DataClawError):
    """Invalid configuration value or unparsable config file."""


class IoFailure(DataClawError):
    """An underlying filesystem operation failed."""


class ClosedSession(DataClawError):
    """The session is closed and rejects new messages."""


class UnknownSession(DataClawError):
    """No session with the given id exists."""


# ---------------------------------------------------------------------------
# Identifiers and timestamps
# ---------------------------------------------------------------------------

def new_id() -> str:
    """Return a fresh 128-bit random identifier as lowercase hex."""
    return uuid.uuid4().hex


def utc_now_iso() -> str:
    """Current UTC time as ISO-8601 with millisecond precision (Z suffix)."""
    now = datetime.now(timezone.utc)
    return now.strftime("%Y-%m-%dT%H:%M:%S.") + f"{now.microsecond // 1000:03d}Z"


# ---------------------------------------------------------------------------
# Enums
# ---------------------------------------------------------------------------

class Role(str, Enum):
    USER = "user"
    AGENT = "agent"
    SYSTEM = "system"
    TOOL = "tool"


class SessionStatus(str, Enum):
    IDLE = "idle"
    RUNNING = "running"
    CLOSED = "closed"


class EventKind(str, Enum):
    SESSION_START = "session_start"
    THINKING = "thinking"
    TOOL_CALL = "tool_call"
    TOOL_RESULT = "tool_result"
    MESSAGE = "message"
    ARTIFACT = "artifact"
    ERROR = "error"
    DONE = "done"


class Verbosity(str, Enum):
    FINAL_ONLY = "final_only"
    PROGRESS = "progress"
    FULL_TRACE = "full_trace"


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------

@dataclass
class ChatMessage:
    """One normalized conversation unit, whatever channel it came from."""

    id: str
    session_id: str
    channel_id: str
    role: Role
    text: str
    attachments: list[str] = field(default_factory=list)
    timestamp: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.role == Role.TOOL and not self.metadata.get("tool"):
            raise ValueError("tool messages must carry a tool name in metadata")


@dataclass
class Session:
    id: str
    channel_id: str
    status: SessionStatus = SessionStatus.IDLE
    created_at: str = ""
    turn_count: int = 0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "channel_id": self.channel_id,
            "status": self.status.value,
            "created_at": self.created_at,
            "turn_count": self.turn_count,
        }


@dataclass
class AgentEvent:
    """One typed trace element in a session's event log."""

    seq: int
    session_id: str
    kind: EventKind
    payload: dict
    timestamp: str

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "kind": self.kind.value,
            "session_id": self.session_id,
            "timestamp": self.timestamp,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AgentEvent":
        return cls(
            seq=d["seq"],
            session_id=d["session_id"],
            kind=EventKind(d["kind"]),
            payload=d["payload"],
            timestamp=d["timestamp"],
        )


@dataclass
class Artifact:
    """A file produced by a turn, stored under the workspace."""

    id: str
    session_id: str
    relative_path: str
    media_type: str
    byte_length: int
    created_at: str

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "session_id": self.session_id,
            "relative_path": self.relative_path,
            "media_type": self.media_type,
            "byte_length": self.byte_length,
            "created_at": self.created_at,
        }


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

ENV_PREFIX = "DATACLAW_"

# Token estimate of the fixed protocol preamble plus a small reserve; the
# compaction ceiling must stay above this or prompts can never be built.
MIN_PROMPT_OVERHEAD_TOKENS = 192


@dataclass(frozen=True)
class AgentConfig:
    max_iterations: int = 50
    context_window_tokens: int = 8192
    compaction_threshold: float = 0.8
    verbosity: Verbosity = Verbosity.PROGRESS
    max_concurrent_sessions: int = 50
    keep_recent_messages: int = 6
    parse_retry_limit: int = 3

    _INT_FIELDS = (
        "max_iterations",
        "context_window_tokens",
        "max_concurrent_sessions",
        "keep_recent_messages",
        "parse_retry_limit",
    )

    def validate(self) -> "AgentConfig":
        for name in self._INT_FIELDS:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        t = self.compaction_threshold
        if not isinstance(t, (int, float)) or isinstance(t, bool) or not (0.0 < t <= 1.0):
            raise ConfigError(f"compaction_threshold must be in (0, 1], got {t!r}")
        if not isinstance(self.verbosity, Verbosity):
            raise ConfigError(f"verbosity must be one of {[v.value for v in Verbosity]}")
        if t * self.context_window_tokens <= MIN_PROMPT_OVERHEAD_TOKENS:
            raise ConfigError(
                "compaction_threshold * context_window_tokens must exceed the "
                f"minimum prompt overhead ({MIN_PROMPT_OVERHEAD_TOKENS} tokens)"
            )
        return self

    def to_dict(self) -> dict:
        return {
            "max_iterations": self.max_iterations,
            "context_window_tokens": self.context_window_tokens,
            "compaction_threshold": self.compaction_threshold,
            "verbosity": self.verbosity.value,
            "max_concurrent_sessions": self.max_concurrent_sessions,
            "keep_recent_messages": self.keep_recent_messages,
            "parse_retry_limit": self.parse_retry_limit,
        }


def serialize_config(config: AgentConfig) -> str:
    """Render a config as the key/value file format (one `key = value` per line)."""
    lines = [f"{key} = {value}" for key, value in config.to_dict().items()]
    return "\n".join(lines) + "\n"


def _coerce_config_value(key: str, raw: str):
    if key in AgentConfig._INT_FIELDS:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {raw!r}") from None
    if key == "compaction_threshold":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"compaction_threshold must be a number, got {raw!r}") from None
    if key == "verbosity":
        try:
            return Verbosity(raw)
        except ValueError:
            raise ConfigError(
                f"verbosity must be one of {[v.value for v in Verbosity]}, got {raw!r}"
            ) from None
    raise ConfigError(f"unknown config key {key!r}")


def parse_config(text: str) -> AgentConfig:
    """Parse the `key = value` config file format. Unknown keys are errors."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno} is not `key = value`: {line!r}")
        key, _, raw = stripped.partition("=")
        values[key.strip()] = _coerce_config_value(key.strip(), raw.strip())
    return AgentConfig(**values).validate()


def apply_env_overrides(config: AgentConfig, env: Mapping[str, str] | None = None) -> AgentConfig:
    """Overlay `DATACLAW_<FIELD>` environment variables onto a config."""
    env = os.environ if env is None else env
    overrides: dict = {}
    for key in config.to_dict():
        raw = env.get(ENV_PREFIX + key.upper())
        if raw is not None:
            overrides[key] = _coerce_config_value(key, raw)
    if not overrides:
        return config
    return replace(config, **overrides).validate()


def load_config(config_path: str, env: Mapping[str, str] | None = None) -> AgentConfig:
    """Load config from a file if present, then apply environment overrides."""
    if os.path.exists(config_path):
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                config = parse_config(fh.read())
        except OSError as exc:
            raise IoFailure(f"cannot read config file {config_path}: {exc}") from exc
    else:
        config = AgentConfig()
    return apply_env_overrides(config, env)


# ---------------------------------------------------------------------------
# Workspace sandbox
# ---------------------------------------------------------------------------

def validate_workspace_path(path: str, workspace_root: str) -> str:
    """Resolve `path` inside `workspace_root`, rejecting escapes.

    Resolution is lexical ("." and ".." segments are collapsed without
    touching the filesystem). Returns the canonical absolute path.
    """
    root = os.path.normpath(os.path.abspath(str(workspace_root)))
    candidate = str(path)
    if not os.path.isabs(candidate):
        candidate = os.path.join(root, candidate)
    resolved = os.path.normpath(candidate)
    if resolved != root and not resolved.startswith(root + os.sep):
        raise PathEscape(f"path {path!r} escapes the workspace root")
    return resolved


_ARTIFACT_NAME_RE = re.compile(r"[^A-Za-z0-9._-]")


def sanitize_artifact_name(name: str) -> str:
    """Validate an artifact file name: no separators, no traversal, non-empty."""
    if not name or name in (".", "..") or "/" in name or "\\" in name or "\x00" in name:
        raise PathEscape(f"invalid artifact name {name!r}")
    if _ARTIFACT_NAME_RE.search(name):
        raise PathEscape(f"artifact name {name!r} contains unsupported characters")
    return name


def slugify(text: str) -> str:
    """Lowercase `text` and collapse non-alphanumeric runs to single dashes."""
    slug = re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")
    return slug


# ---------------------------------------------------------------------------
# Session table
# ---------------------------------------------------------------------------

class SessionTable:
    """Thread-safe registry of sessions with a concurrency cap.

    Capacity counts non-closed sessions; closing a session frees a slot.
    Individual Session mutation stays with the owning turn executor.
    """

    def __init__(
        self,
        limit: int,
        *,
        new_id: Callable[[], str] = new_id,
        now: Callable[[], str] = utc_now_iso,
    ) -> None:
        self._limit = limit
        self._new_id = new_id
        self._now = now
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def set_limit(self, limit: int) -> None:
        with self._lock:
            self._limit = limit

    def new_session(self, channel_id: str) -> Session:
        with self._lock:
            active = sum(1 for s in self._sessions.values() if s.status != SessionStatus.CLOSED)
            if active >= self._limit:
                raise CapacityExceeded(
                    f"session limit of {self._limit} concurrent sessions reached"
                )
            session = Session(
                id=self._new_id(),
                channel_id=channel_id,
                status=SessionStatus.IDLE,
                created_at=self._now(),
            )
            self._sessions[session.id] = session
            return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise UnknownSession(f"no session {session_id}")
        return session

    def close(self, session_id: str) -> Session:
        session = self.get(session_id)
        session.status = SessionStatus.CLOSED
        return session

    def all(self) -> list[Session]:
        with self._lock:
            return list(self._sessions.values())

    def active_count(self) -> int:
        with self._lock:
            return sum(1 for s in self._sessions.values() if s.status != SessionStatus.CLOSED)

    @property
    def limit(self) -> int:
        return self._limit
