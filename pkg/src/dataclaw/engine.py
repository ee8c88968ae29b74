"""The ReAct reasoning loop.

The model speaks a plain-text protocol: an optional `THOUGHT:` line, then
either `ACTION:` followed by a JSON object naming a tool and its args, or
`FINAL:` followed by the answer. Each iteration interleaves thought,
action, and observation; tool failures come back as ERROR observations so
the model can correct course, and the loop is hard-capped at the
configured iteration limit.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Callable, Protocol

from .core import (
    AgentConfig,
    ChatMessage,
    DataClawError,
    Role,
    Session,
)
from .llm import (
    Backend,
    BudgetExceeded,
    CompletionRequest,
    estimate_tokens,
    truncate_to_tokens,
)
from .memory import DataMemory, maybe_compact
from .skills import SkillBundle, match_active_skills
from .tools.registry import ToolContext, ToolRegistry


class UnparsableAction(DataClawError):
    """Model output contained neither a FINAL answer nor a parsable ACTION."""


OBSERVATION_TOKEN_LIMIT = 1024
TRUNCATION_MARKER = " [truncated]"
SYSTEM_BLOCK_BUDGET_FRACTION = 0.25

PARSE_RETRY_OBSERVATION = (
    "ERROR: unparsable action; reply with ACTION: {json} or FINAL: text"
)

AGENT_PREAMBLE = """\
You are a careful data agent working inside a sandboxed local workspace.
Solve the user's request step by step. On every reply, first write an
optional line starting with `THOUGHT:` describing your reasoning, then
exactly one of:

  ACTION: {"tool": "<tool_name>", "args": {...}}
  FINAL: <your answer to the user>

Observations from tools arrive as messages starting with the tool output.
A failed tool call arrives as `ERROR: ...`; adjust and try again.
"""


# ---------------------------------------------------------------------------
# Actions and traces
# ---------------------------------------------------------------------------

@dataclass
class Action:
    variant: str  # "tool_call" | "final"
    tool: str = ""
    args: dict = field(default_factory=dict)
    text: str = ""


@dataclass
class ReActStep:
    step_index: int
    thought: str
    action: Action
    observation: str | None = None


@dataclass
class TurnTrace:
    session_id: str
    steps: list[ReActStep] = field(default_factory=list)
    outcome: str = ""  # "final" | "aborted"
    final_text: str = ""
    abort_reason: str = ""
    started_at: str = ""
    ended_at: str = ""


class EventSink(Protocol):
    def emit(self, kind: str, payload: dict) -> None: ...


@dataclass
class TurnDeps:
    """Everything a turn needs, injected so the loop stays testable."""

    backend: Backend
    registry: ToolRegistry
    tool_ctx: ToolContext
    memory: DataMemory
    config: AgentConfig
    sink: EventSink
    summarizer: Callable[[list[ChatMessage], int], str]
    instructions: str = ""
    persona: str = ""
    active_skills: list[SkillBundle] = field(default_factory=list)
    cancelled: Callable[[], bool] = lambda: False
    now: Callable[[], str] = lambda: ""
    new_id: Callable[[], str] = lambda: ""


# ---------------------------------------------------------------------------
# Prompt assembly
# ---------------------------------------------------------------------------

def _tool_catalog(registry: ToolRegistry) -> str:
    lines = ["Available tools:"]
    for spec in registry.specs():
        if spec.arg_schema is None:
            args = "any args"
        else:
            args = ", ".join(
                f"{name}: {a.type}{'' if a.required else '?'}"
                for name, a in spec.arg_schema.items()
            ) or "no args"
        lines.append(f"- {spec.name}({args}): {spec.description}")
    return "\n".join(lines)


def _skill_block(bundle: SkillBundle) -> str:
    parts = [f"## Skill: {bundle.name}"]
    if bundle.description:
        parts.append(bundle.description)
    if bundle.instructions:
        parts.append(bundle.instructions)
    for user_text, assistant_text in bundle.examples:
        parts.append(f"- user: {user_text}\n  assistant: {assistant_text}")
    return "\n".join(parts)


def build_prompt(
    session: Session,
    memory: DataMemory,
    active_skills: list[SkillBundle],
    instructions: str,
    persona: str,
    config: AgentConfig,
    registry: ToolRegistry | None = None,
) -> CompletionRequest:
    """Assemble the system block and message window for one backend call.

    System block order: protocol preamble (with the tool catalog), global
    instructions, persona, then active skill bodies in registration order.
    Skill bodies are truncated lowest-priority-first (last registered
    first) when the block outgrows 25% of the context window.
    """
    sections = [AGENT_PREAMBLE]
    if registry is not None:
        sections.append(_tool_catalog(registry))
    if instructions:
        sections.append(instructions)
    if persona:
        sections.append(persona)

    base = "\n\n".join(sections)
    skill_blocks = [_skill_block(b) for b in active_skills]
    block_budget = int(config.context_window_tokens * SYSTEM_BLOCK_BUDGET_FRACTION)

    def assemble() -> str:
        live = [b for b in skill_blocks if b]
        return "\n\n".join([base] + live) if live else base

    system_block = assemble()
    for i in range(len(skill_blocks) - 1, -1, -1):
        overflow = estimate_tokens(system_block) - block_budget
        if overflow <= 0:
            break
        keep = max(estimate_tokens(skill_blocks[i]) - overflow, 0)
        skill_blocks[i] = truncate_to_tokens(skill_blocks[i], keep)
        system_block = assemble()

    messages = [(m.role.value, m.text) for m in memory.entries]
    total = estimate_tokens(system_block) + sum(estimate_tokens(t) for _, t in messages)
    if total > config.context_window_tokens:
        raise BudgetExceeded(
            f"prompt estimates {total} tokens over a window of "
            f"{config.context_window_tokens}"
        )
    max_output = min(2048, config.context_window_tokens - total)
    return CompletionRequest(
        system_block=system_block,
        messages=messages,
        stop_sequences=[],
        max_output_tokens=max(max_output, 1),
    )


# ---------------------------------------------------------------------------
# Output parsing
# ---------------------------------------------------------------------------

_THOUGHT_RE = re.compile(r"^[ \t]*THOUGHT:", re.MULTILINE)
_ACTION_RE = re.compile(r"^[ \t]*(ACTION|FINAL):", re.MULTILINE)
_MARKER_RE = re.compile(r"^[ \t]*(THOUGHT|ACTION|FINAL):", re.MULTILINE)


def parse_action(model_output: str) -> tuple[str, Action]:
    """Extract (thought, action) from raw model output.

    Takes the last THOUGHT marker and the last ACTION/FINAL marker,
    tolerating surrounding prose. ACTION must be followed by a JSON object
    with `tool` and `args`.
    """
    action_match = None
    for action_match in _ACTION_RE.finditer(model_output):
        pass
    if action_match is None:
        raise UnparsableAction("no ACTION or FINAL marker found")

    thought = ""
    thought_match = None
    for candidate in _THOUGHT_RE.finditer(model_output):
        if candidate.start() < action_match.start():
            thought_match = candidate
    if thought_match is not None:
        tail = model_output[thought_match.end():]
        boundary = _MARKER_RE.search(tail)
        thought = (tail[: boundary.start()] if boundary else tail).strip()

    rest = model_output[action_match.end():]
    if action_match.group(1) == "FINAL":
        text = rest.strip()
        if not text:
            raise UnparsableAction("FINAL answer is empty")
        return thought, Action(variant="final", text=text)

    brace = rest.find("{")
    if brace < 0:
        raise UnparsableAction("ACTION is not followed by a JSON object")
    try:
        payload, _ = json.JSONDecoder().raw_decode(rest[brace:])
    except ValueError as exc:
        raise UnparsableAction(f"ACTION JSON failed to parse: {exc}") from exc
    if not isinstance(payload, dict) or not isinstance(payload.get("tool"), str):
        raise UnparsableAction("ACTION JSON must be an object with a tool name")
    args = payload.get("args", {})
    if not isinstance(args, dict):
        raise UnparsableAction("ACTION args must be an object")
    return thought, Action(variant="tool_call", tool=payload["tool"], args=args)


def truncate_observation(text: str, limit_tokens: int = OBSERVATION_TOKEN_LIMIT) -> str:
    if estimate_tokens(text) <= limit_tokens:
        return text
    budget = limit_tokens - estimate_tokens(TRUNCATION_MARKER)
    return truncate_to_tokens(text, budget) + TRUNCATION_MARKER


# ---------------------------------------------------------------------------
# The loop
# ---------------------------------------------------------------------------

def _message(deps: TurnDeps, session: Session, role: Role, text: str, **metadata) -> ChatMessage:
    return ChatMessage(
        id=deps.new_id() or f"m{len(deps.memory.entries) + 1}",
        session_id=session.id,
        channel_id=session.channel_id,
        role=role,
        text=text,
        timestamp=deps.now(),
        metadata=dict(metadata),
    )


def run_turn(session: Session, user_message: ChatMessage, deps: TurnDeps) -> TurnTrace:
    """Execute one full turn: think, act, observe, repeat, answer.

    Never raises; every failure mode ends as an aborted trace with an
    error event (reasons: max_iterations, parse_failures, backend_failure,
    cancelled).
    """
    config = deps.config
    trace = TurnTrace(session_id=session.id, started_at=deps.now())
    deps.memory.append(user_message)
    deps.sink.emit(
        "session_start",
        {"turn": session.turn_count + 1, "user_text": user_message.text},
    )

    def abort(reason: str, detail: str) -> TurnTrace:
        deps.sink.emit("error", {"reason": reason, "detail": detail})
        trace.outcome = "aborted"
        trace.abort_reason = reason
        trace.ended_at = deps.now()
        return trace

    consecutive_parse_failures = 0
    for _ in range(config.max_iterations):
        if deps.cancelled():
            return abort("cancelled", "turn cancelled by operator")

        try:
            maybe_compact(deps.memory, config, deps.summarizer, now=deps.now)
            request = build_prompt(
                session,
                deps.memory,
                deps.active_skills,
                deps.instructions,
                deps.persona,
                config,
                deps.registry,
            )
            result = deps.backend.complete(request)
        except DataClawError as exc:
            return abort("backend_failure", str(exc))

        deps.memory.append(_message(deps, session, Role.AGENT, result.text))

        try:
            thought, action = parse_action(result.text)
        except UnparsableAction:
            consecutive_parse_failures += 1
            if consecutive_parse_failures >= config.parse_retry_limit:
                return abort(
                    "parse_failures",
                    f"{consecutive_parse_failures} consecutive unparsable replies",
                )
            deps.memory.append(
                _message(deps, session, Role.SYSTEM, PARSE_RETRY_OBSERVATION)
            )
            continue
        consecutive_parse_failures = 0

        step_index = len(trace.steps) + 1
        deps.sink.emit("thinking", {"step": step_index, "text": thought})

        if action.variant == "final":
            trace.steps.append(ReActStep(step_index, thought, action))
            deps.sink.emit("message", {"text": action.text})
            deps.sink.emit("done", {"turn": session.turn_count + 1, "steps": step_index})
            trace.outcome = "final"
            trace.final_text = action.text
            trace.ended_at = deps.now()
            return trace

        deps.sink.emit(
            "tool_call", {"step": step_index, "tool": action.tool, "args": action.args}
        )
        observation = deps.registry.dispatch(deps.tool_ctx, action.tool, action.args)
        observation = truncate_observation(observation)
        deps.memory.append(
            _message(deps, session, Role.TOOL, observation, tool=action.tool)
        )
        deps.sink.emit(
            "tool_result",
            {"step": step_index, "tool": action.tool, "observation": observation},
        )
        trace.steps.append(ReActStep(step_index, thought, action, observation))

    return abort(
        "max_iterations", f"no final answer within {config.max_iterations} iterations"
    )


__all__ = [
    "Action",
    "AGENT_PREAMBLE",
    "EventSink",
    "PARSE_RETRY_OBSERVATION",
    "ReActStep",
    "TurnDeps",
    "TurnTrace",
    "UnparsableAction",
    "build_prompt",
    "match_active_skills",
    "parse_action",
    "run_turn",
    "truncate_observation",
]
