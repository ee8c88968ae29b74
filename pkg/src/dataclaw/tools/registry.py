"""Tool registry: named, schema-validated operations the engine dispatches.

Dispatch never lets an exception cross back into the reasoning loop; every
failure comes back as an `ERROR: ...` observation string.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Callable

from ..core import Artifact, DataClawError
from ..memory import GlobalMemoryStore
from ..persist import ArtifactStore, WorkspaceLayout
from .datastore import DatasetStore


class DuplicateName(DataClawError):
    """A builtin tool name was registered twice."""


@dataclass
class ArgSpec:
    type: str  # string | number | boolean | object | array
    required: bool = False


@dataclass
class ToolSpec:
    name: str
    description: str
    arg_schema: dict[str, ArgSpec] | None  # None: accept any args (skill executables)
    origin: str = "builtin"  # builtin | skill

    def to_dict(self) -> dict:
        schema = None
        if self.arg_schema is not None:
            schema = {
                name: {"type": a.type, "required": a.required}
                for name, a in self.arg_schema.items()
            }
        return {
            "name": self.name,
            "description": self.description,
            "arg_schema": schema,
            "origin": self.origin,
        }


@dataclass
class ToolContext:
    """Per-session state handed to tool executors."""

    session_id: str
    workspace: WorkspaceLayout
    datasets: DatasetStore
    global_memory: GlobalMemoryStore
    artifact_store: ArtifactStore
    artifacts_created: list[Artifact] = field(default_factory=list)

    def save_artifact(self, name: str, data: bytes, media_type: str) -> Artifact:
        artifact = self.artifact_store.save(self.session_id, name, data, media_type)
        self.artifacts_created.append(artifact)
        return artifact

    def resolve_artifact_ref(self, ref: str) -> tuple[str, bytes] | None:
        """Resolve a reference by artifact id, else by name in this session."""
        artifact = self.artifact_store.get(ref)
        if artifact is None:
            artifact = self.artifact_store.find_by_name(self.session_id, ref)
        if artifact is None:
            return None
        return artifact.media_type, self.artifact_store.read_bytes(artifact)


Executor = Callable[[ToolContext, dict], object]

_PY_TYPES = {
    "string": str,
    "boolean": bool,
    "object": dict,
    "array": list,
}


def _type_ok(value, type_name: str) -> bool:
    if type_name == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    expected = _PY_TYPES.get(type_name)
    return expected is not None and isinstance(value, expected)


class ToolRegistry:
    """Builtin tools are fixed after startup; skill tools swap atomically."""

    def __init__(self) -> None:
        self._builtins: dict[str, tuple[ToolSpec, Executor]] = {}
        self._skill: dict[str, tuple[ToolSpec, Executor]] = {}
        self._lock = threading.Lock()

    def register(self, spec: ToolSpec, executor: Executor) -> None:
        with self._lock:
            if spec.origin == "builtin":
                if spec.name in self._builtins:
                    raise DuplicateName(f"builtin tool {spec.name!r} already registered")
                self._builtins[spec.name] = (spec, executor)
            else:
                if spec.name in self._builtins:
                    raise DuplicateName(f"skill tool {spec.name!r} shadows a builtin")
                self._skill[spec.name] = (spec, executor)

    def replace_skill_tools(self, tools: list[tuple[ToolSpec, Executor]]) -> None:
        """Atomically swap the full skill-origin tool set."""
        fresh: dict[str, tuple[ToolSpec, Executor]] = {}
        for spec, executor in tools:
            if spec.name in self._builtins:
                raise DuplicateName(f"skill tool {spec.name!r} shadows a builtin")
            fresh[spec.name] = (spec, executor)
        with self._lock:
            self._skill = fresh

    def lookup(self, name: str) -> tuple[ToolSpec, Executor] | None:
        with self._lock:
            return self._builtins.get(name) or self._skill.get(name)

    def specs(self) -> list[ToolSpec]:
        with self._lock:
            builtin = [spec for spec, _ in self._builtins.values()]
            skill = [spec for spec, _ in self._skill.values()]
        return builtin + skill

    # -- dispatch -----------------------------------------------------------

    def dispatch(self, ctx: ToolContext, name: str, args) -> str:
        entry = self.lookup(name)
        if entry is None:
            return f"ERROR: unknown tool {name}"
        spec, executor = entry
        if not isinstance(args, dict):
            return "ERROR: args must be an object"
        if spec.arg_schema is not None:
            problem = self._validate_args(spec, args)
            if problem:
                return f"ERROR: {problem}"
        try:
            result = executor(ctx, args)
        except DataClawError as exc:
            return f"ERROR: {exc}"
        except Exception as exc:  # noqa: BLE001 - contract: nothing escapes
            return f"ERROR: {type(exc).__name__}: {exc}"
        if isinstance(result, str):
            return result
        try:
            return json.dumps(result, ensure_ascii=True, separators=(",", ":"))
        except (TypeError, ValueError) as exc:
            return f"ERROR: tool {name} produced an unserializable result: {exc}"

    @staticmethod
    def _validate_args(spec: ToolSpec, args: dict) -> str | None:
        for arg_name, arg in spec.arg_schema.items():
            if arg.required and arg_name not in args:
                return f"missing required arg {arg_name}"
        for arg_name, value in args.items():
            arg = spec.arg_schema.get(arg_name)
            if arg is None:
                return f"unexpected arg {arg_name}"
            if not _type_ok(value, arg.type):
                return f"arg {arg_name} must be {arg.type}"
        return None
