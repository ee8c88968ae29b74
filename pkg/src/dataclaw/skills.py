"""SKILL.md bundles: parsing, trigger matching, and hot-loading.

A skill directory holds a SKILL.md with `---` front matter (name,
description, version, triggers: [a, b], optional tool/command), markdown
instructions, and an optional `## Examples` section of user/assistant
pairs. Skills may declare one executable tool, run as a sandboxed
subprocess with JSON args on stdin and the observation on stdout.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import subprocess
import sys
import threading
from dataclasses import dataclass, field

from .core import DataClawError, validate_workspace_path
from .tools.registry import Executor, ToolSpec

logger = logging.getLogger(__name__)

SKILL_FILE = "SKILL.md"
SKILL_TOOL_TIMEOUT_SECONDS = 30.0

_FRONT_KEYS = {"name", "description", "version", "triggers", "tool", "command"}


class MalformedSkill(DataClawError):
    """SKILL.md violates the bundle grammar."""

    def __init__(self, message: str, lineno: int = 0) -> None:
        super().__init__(f"{message} (line {lineno})" if lineno else message)
        self.lineno = lineno


@dataclass
class SkillBundle:
    name: str
    description: str
    triggers: list[str]
    instructions: str
    examples: list[tuple[str, str]] = field(default_factory=list)
    source_dir: str = ""
    content_hash: str = ""
    version: str = ""
    tool: str | None = None
    command: str | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "triggers": list(self.triggers),
            "version": self.version,
            "tool": self.tool,
            "source_dir": self.source_dir,
            "content_hash": self.content_hash,
        }


def _parse_triggers(raw: str, lineno: int) -> list[str]:
    raw = raw.strip()
    if not (raw.startswith("[") and raw.endswith("]")):
        raise MalformedSkill("triggers must be a bracketed list: [a, b]", lineno)
    items = [item.strip() for item in raw[1:-1].split(",")]
    return [item for item in items if item]


def parse_skill(file_bytes: bytes, source_dir: str = "") -> SkillBundle:
    """Parse SKILL.md bytes into a bundle; malformed input raises, never crashes."""
    try:
        text = file_bytes.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedSkill(f"SKILL.md is not valid UTF-8: {exc}") from exc

    lines = text.split("\n")
    if not lines or lines[0].strip() != "---":
        raise MalformedSkill("missing front matter fence", 1)
    close = None
    for i in range(1, len(lines)):
        if lines[i].strip() == "---":
            close = i
            break
    if close is None:
        raise MalformedSkill("front matter fence never closes", len(lines))

    fields: dict[str, str] = {}
    triggers: list[str] | None = None
    for lineno in range(1, close):
        line = lines[lineno]
        if not line.strip():
            continue
        if ":" not in line:
            raise MalformedSkill(f"front matter line is not `key: value`: {line!r}", lineno + 1)
        key, _, value = line.partition(":")
        key = key.strip()
        if key not in _FRONT_KEYS:
            raise MalformedSkill(f"unknown front matter key {key!r}", lineno + 1)
        if key == "triggers":
            triggers = _parse_triggers(value, lineno + 1)
        else:
            fields[key] = value.strip()

    name = fields.get("name", "")
    if not name:
        raise MalformedSkill("front matter must set a name", close + 1)
    if triggers is None or not triggers:
        raise MalformedSkill("front matter must set non-empty triggers", close + 1)
    if ("tool" in fields) != ("command" in fields):
        raise MalformedSkill("tool and command must be declared together", close + 1)

    body = "\n".join(lines[close + 1 :]).lstrip("\n")
    instructions, examples = _split_examples(body)

    return SkillBundle(
        name=name,
        description=fields.get("description", ""),
        triggers=triggers,
        instructions=instructions,
        examples=examples,
        source_dir=str(source_dir),
        content_hash=hashlib.sha256(file_bytes).hexdigest(),
        version=fields.get("version", ""),
        tool=fields.get("tool"),
        command=fields.get("command"),
    )


def _split_examples(body: str) -> tuple[str, list[tuple[str, str]]]:
    lines = body.split("\n")
    try:
        start = next(i for i, line in enumerate(lines) if line.strip() == "## Examples")
    except StopIteration:
        return body.rstrip("\n"), []
    instructions = "\n".join(lines[:start]).rstrip("\n")
    examples: list[tuple[str, str]] = []
    pending_user: str | None = None
    for line in lines[start + 1 :]:
        stripped = line.strip()
        if stripped.startswith("- user:"):
            pending_user = stripped[len("- user:") :].strip()
        elif stripped.startswith("assistant:") and pending_user is not None:
            examples.append((pending_user, stripped[len("assistant:") :].strip()))
            pending_user = None
        elif stripped.startswith("- assistant:") and pending_user is not None:
            examples.append((pending_user, stripped[len("- assistant:") :].strip()))
            pending_user = None
    return instructions, examples


# ---------------------------------------------------------------------------
# Scanning / hot-loading
# ---------------------------------------------------------------------------

@dataclass
class ScanReport:
    registered: list[str] = field(default_factory=list)
    removed: list[str] = field(default_factory=list)
    unchanged: list[str] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "registered": self.registered,
            "removed": self.removed,
            "unchanged": self.unchanged,
            "errors": self.errors,
        }


def _skill_tool_executor(bundle: SkillBundle, workspace_root: str) -> Executor:
    command_path = validate_workspace_path(
        os.path.join(bundle.source_dir, bundle.command), bundle.source_dir
    )

    def run(ctx, args: dict) -> str:
        argv = [sys.executable, command_path] if command_path.endswith(".py") else [command_path]
        try:
            proc = subprocess.run(
                argv,
                input=json.dumps(args).encode("utf-8"),
                capture_output=True,
                cwd=workspace_root,
                timeout=SKILL_TOOL_TIMEOUT_SECONDS,
            )
        except subprocess.TimeoutExpired:
            raise DataClawError(
                f"skill tool {bundle.tool} timed out after {SKILL_TOOL_TIMEOUT_SECONDS:g}s"
            ) from None
        except OSError as exc:
            raise DataClawError(f"skill tool {bundle.tool} failed to start: {exc}") from exc
        if proc.returncode != 0:
            detail = proc.stderr.decode("utf-8", errors="replace").strip()
            raise DataClawError(f"skill tool {bundle.tool} exited {proc.returncode}: {detail}")
        return proc.stdout.decode("utf-8", errors="replace")

    return run


class SkillManager:
    """Owns the active skill set; scans run exclusively, reads see snapshots."""

    def __init__(self, workspace_root: str, skills_dir: str, registry=None) -> None:
        self.workspace_root = str(workspace_root)
        self.skills_dir = str(skills_dir)
        self.registry = registry
        self._active: dict[str, SkillBundle] = {}
        self._stamp = 0
        self._scan_lock = threading.Lock()
        self._state_lock = threading.Lock()

    def active(self) -> tuple[list[SkillBundle], int]:
        """Immutable snapshot of the active set plus its version stamp."""
        with self._state_lock:
            return list(self._active.values()), self._stamp

    def scan(self) -> ScanReport:
        """Rescan the skills directory and swap the active set atomically.

        Malformed bundles are reported and skipped; they never abort the
        scan or disturb other bundles.
        """
        with self._scan_lock:
            report = ScanReport()
            found: dict[str, SkillBundle] = {}
            if os.path.isdir(self.skills_dir):
                for entry in sorted(os.listdir(self.skills_dir)):
                    skill_dir = os.path.join(self.skills_dir, entry)
                    skill_path = os.path.join(skill_dir, SKILL_FILE)
                    if not os.path.isdir(skill_dir) or not os.path.isfile(skill_path):
                        continue
                    try:
                        with open(skill_path, "rb") as fh:
                            bundle = parse_skill(fh.read(), source_dir=skill_dir)
                        if bundle.name != entry:
                            raise MalformedSkill(
                                f"bundle name {bundle.name!r} does not match directory {entry!r}"
                            )
                    except MalformedSkill as exc:
                        logger.warning("skipping malformed skill %s: %s", entry, exc)
                        report.errors.append({"dir": entry, "error": str(exc), "line": exc.lineno})
                        continue
                    found[bundle.name] = bundle

            with self._state_lock:
                old = self._active
                # keep first-registration order; append new names at the end
                merged: dict[str, SkillBundle] = {}
                for name, bundle in old.items():
                    if name in found:
                        merged[name] = found[name]
                for name, bundle in found.items():
                    if name not in merged:
                        merged[name] = bundle
                for name, bundle in merged.items():
                    previous = old.get(name)
                    if previous is None:
                        report.registered.append(name)
                    elif previous.content_hash != bundle.content_hash:
                        report.registered.append(name)
                    else:
                        report.unchanged.append(name)
                report.removed = [name for name in old if name not in merged]
                if merged != old:
                    self._stamp += 1
                self._active = merged

            if self.registry is not None:
                tools = []
                for bundle in merged.values():
                    if bundle.tool and bundle.command:
                        spec = ToolSpec(
                            name=bundle.tool,
                            description=f"Skill tool from {bundle.name}",
                            arg_schema=None,
                            origin="skill",
                        )
                        tools.append((spec, _skill_tool_executor(bundle, self.workspace_root)))
                self.registry.replace_skill_tools(tools)
            return report


def match_active_skills(user_text: str, bundles: list[SkillBundle]) -> list[SkillBundle]:
    """Skills whose triggers occur case-insensitively in the text, in
    registration order."""
    lowered = user_text.lower()
    return [b for b in bundles if any(t.lower() in lowered for t in b.triggers)]
