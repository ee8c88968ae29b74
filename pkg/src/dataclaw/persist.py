"""Workspace layout, session transcript logging, and the artifact store.

Everything lives under one root directory; all writes stay inside it.
Transcripts are JSON-lines (one AgentEvent per line) and artifacts are
written atomically via temp+rename.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from typing import Callable

from .core import (
    AgentConfig,
    AgentEvent,
    Artifact,
    DataClawError,
    EventKind,
    IoFailure,
    new_id,
    sanitize_artifact_name,
    serialize_config,
    utc_now_iso,
    validate_workspace_path,
)
from .memory import AGENTS_FILE, MEMORY_FILE, SOULS_FILE


class TranscriptError(DataClawError):
    """A transcript line failed to parse."""

    def __init__(self, message: str, lineno: int) -> None:
        super().__init__(message)
        self.lineno = lineno


@dataclass
class WorkspaceLayout:
    root: str

    @property
    def config_path(self) -> str:
        return os.path.join(self.root, "config")

    @property
    def agents_path(self) -> str:
        return os.path.join(self.root, AGENTS_FILE)

    @property
    def souls_path(self) -> str:
        return os.path.join(self.root, SOULS_FILE)

    @property
    def memory_path(self) -> str:
        return os.path.join(self.root, MEMORY_FILE)

    @property
    def skills_dir(self) -> str:
        return os.path.join(self.root, "skills")

    @property
    def sessions_dir(self) -> str:
        return os.path.join(self.root, "sessions")

    @property
    def artifacts_dir(self) -> str:
        return os.path.join(self.root, "artifacts")

    @property
    def data_dir(self) -> str:
        return os.path.join(self.root, "data")

    def transcript_path(self, session_id: str) -> str:
        return os.path.join(self.sessions_dir, session_id, "transcript.jsonl")

    def resolve(self, path: str) -> str:
        """Sandbox-resolve a user-supplied path against this workspace."""
        return validate_workspace_path(path, self.root)


_TEMPLATES = {
    MEMORY_FILE: "# MEMORY\n",
    SOULS_FILE: "# SOULS\n\n## Preferences\n",
    AGENTS_FILE: "",
}


def init_workspace(root: str) -> WorkspaceLayout:
    """Create the workspace skeleton; never overwrites existing content."""
    layout = WorkspaceLayout(root=os.path.abspath(str(root)))
    try:
        for directory in (
            layout.root,
            layout.skills_dir,
            layout.sessions_dir,
            layout.artifacts_dir,
            layout.data_dir,
        ):
            os.makedirs(directory, exist_ok=True)
        for name, template in _TEMPLATES.items():
            path = os.path.join(layout.root, name)
            if not os.path.exists(path):
                with open(path, "w", encoding="utf-8", newline="\n") as fh:
                    fh.write(template)
        if not os.path.exists(layout.config_path):
            with open(layout.config_path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(serialize_config(AgentConfig()))
    except OSError as exc:
        raise IoFailure(f"cannot initialize workspace at {root}: {exc}") from exc
    return layout


def is_initialized(root: str) -> bool:
    layout = WorkspaceLayout(root=os.path.abspath(str(root)))
    return os.path.isfile(layout.config_path) and os.path.isdir(layout.sessions_dir)


# ---------------------------------------------------------------------------
# Transcripts
# ---------------------------------------------------------------------------

class TranscriptWriter:
    """Appends one JSON line per event; flushes eagerly, fsyncs on turn end."""

    def __init__(self, workspace: WorkspaceLayout, session_id: str) -> None:
        self.path = workspace.transcript_path(session_id)
        os.makedirs(os.path.dirname(self.path), exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8", newline="\n")
        self._lock = threading.Lock()

    def append(self, event: AgentEvent) -> None:
        line = json.dumps(event.to_dict(), ensure_ascii=True, separators=(",", ":"))
        try:
            with self._lock:
                self._fh.write(line + "\n")
                self._fh.flush()
                if event.kind in (EventKind.DONE, EventKind.ERROR):
                    os.fsync(self._fh.fileno())
        except (OSError, ValueError) as exc:
            raise IoFailure(f"cannot append to transcript {self.path}: {exc}") from exc

    def close(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._fh.close()


def read_transcript(path: str) -> list[AgentEvent]:
    """Parse a transcript file back into events; names the bad line on failure."""
    events: list[AgentEvent] = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoFailure(f"cannot read transcript {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            events.append(AgentEvent.from_dict(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise TranscriptError(f"transcript line {lineno} is corrupt: {exc}", lineno) from exc
    return events


# ---------------------------------------------------------------------------
# Artifact store
# ---------------------------------------------------------------------------

class ArtifactStore:
    """Workspace-wide artifact registry with atomic, collision-safe writes."""

    def __init__(
        self,
        workspace: WorkspaceLayout,
        *,
        new_id: Callable[[], str] = new_id,
        now: Callable[[], str] = utc_now_iso,
    ) -> None:
        self.workspace = workspace
        self._new_id = new_id
        self._now = now
        self._by_id: dict[str, Artifact] = {}
        self._lock = threading.Lock()

    def save(self, session_id: str, name: str, data: bytes, media_type: str) -> Artifact:
        name = sanitize_artifact_name(name)
        session_dir = os.path.join(self.workspace.artifacts_dir, session_id)
        with self._lock:
            try:
                os.makedirs(session_dir, exist_ok=True)
                final = self._collision_free(session_dir, name)
                tmp = final + ".part"
                with open(tmp, "wb") as fh:
                    fh.write(data)
                os.replace(tmp, final)
            except OSError as exc:
                raise IoFailure(f"cannot save artifact {name}: {exc}") from exc
            artifact = Artifact(
                id=self._new_id(),
                session_id=session_id,
                relative_path=os.path.relpath(final, self.workspace.root),
                media_type=media_type,
                byte_length=len(data),
                created_at=self._now(),
            )
            self._by_id[artifact.id] = artifact
            return artifact

    @staticmethod
    def _collision_free(directory: str, name: str) -> str:
        stem, dot, suffix = name.rpartition(".")
        if not dot:
            stem, suffix = name, ""
        candidate = os.path.join(directory, name)
        counter = 2
        while os.path.exists(candidate):
            alt = f"{stem}-{counter}.{suffix}" if dot else f"{stem}-{counter}"
            candidate = os.path.join(directory, alt)
            counter += 1
        return candidate

    def get(self, artifact_id: str) -> Artifact | None:
        with self._lock:
            return self._by_id.get(artifact_id)

    def find_by_name(self, session_id: str, name: str) -> Artifact | None:
        """Look an artifact up by file name within one session's directory."""
        with self._lock:
            for artifact in self._by_id.values():
                if artifact.session_id == session_id and os.path.basename(artifact.relative_path) == name:
                    return artifact
        return None

    def read_bytes(self, artifact: Artifact) -> bytes:
        path = os.path.join(self.workspace.root, artifact.relative_path)
        try:
            with open(path, "rb") as fh:
                return fh.read()
        except OSError as exc:
            raise IoFailure(f"cannot read artifact {artifact.relative_path}: {exc}") from exc

    def all(self) -> list[Artifact]:
        with self._lock:
            return list(self._by_id.values())
