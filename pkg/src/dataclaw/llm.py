"""Language-model backends and deterministic token accounting.

Two backend kinds are supported: a remote chat-completions HTTP endpoint
and a scripted backend that replays canned responses for offline runs and
tests. Token estimation is bytes/4 rounded up so every budget decision in
the system is reproducible without a tokenizer.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from enum import Enum

import requests

from .core import ChatMessage, DataClawError, Role


class BackendUnreachable(DataClawError):
    """The remote backend could not be reached or returned garbage."""


class ScriptExhausted(DataClawError):
    """A scripted backend was asked for more responses than it holds."""


class BudgetExceeded(DataClawError):
    """A completion request does not fit the context window."""


# ---------------------------------------------------------------------------
# Token estimation
# ---------------------------------------------------------------------------

def estimate_tokens(text: str) -> int:
    """Deterministic token estimate: ceil(utf-8 byte length / 4)."""
    return -(-len(text.encode("utf-8")) // 4)


def truncate_to_tokens(text: str, max_tokens: int) -> str:
    """Cut `text` so its estimate is at most `max_tokens` (utf-8 safe)."""
    if max_tokens <= 0:
        return ""
    if estimate_tokens(text) <= max_tokens:
        return text
    return text.encode("utf-8")[: max_tokens * 4].decode("utf-8", errors="ignore")


# ---------------------------------------------------------------------------
# Request/response types
# ---------------------------------------------------------------------------

@dataclass
class CompletionRequest:
    system_block: str
    messages: list[tuple[str, str]]
    stop_sequences: list[str] = field(default_factory=list)
    max_output_tokens: int = 1024

    def input_token_estimate(self) -> int:
        return estimate_tokens(self.system_block) + sum(
            estimate_tokens(text) for _, text in self.messages
        )


@dataclass
class CompletionResult:
    text: str
    input_token_estimate: int
    output_token_estimate: int


class BackendKind(str, Enum):
    REMOTE_CHAT_API = "remote_chat_api"
    SCRIPTED = "scripted"


@dataclass
class BackendDescriptor:
    kind: BackendKind
    model_name: str = ""
    endpoint: str = ""
    script: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

class Backend:
    """Common budget enforcement; subclasses implement `_complete`."""

    def __init__(self, context_window_tokens: int = 8192) -> None:
        self.context_window_tokens = context_window_tokens

    def complete(self, request: CompletionRequest) -> CompletionResult:
        input_estimate = request.input_token_estimate()
        if input_estimate > self.context_window_tokens:
            raise BudgetExceeded(
                f"request estimates {input_estimate} tokens; "
                f"window is {self.context_window_tokens}"
            )
        text = self._complete(request)
        return CompletionResult(
            text=text,
            input_token_estimate=input_estimate,
            output_token_estimate=estimate_tokens(text),
        )

    def _complete(self, request: CompletionRequest) -> str:
        raise NotImplementedError


class ScriptedBackend(Backend):
    """Replays a fixed list of responses in order; safe for concurrent use."""

    def __init__(self, script: list[str], context_window_tokens: int = 8192) -> None:
        super().__init__(context_window_tokens)
        self._script = list(script)
        self._cursor = 0
        self._lock = threading.Lock()

    def _complete(self, request: CompletionRequest) -> str:
        with self._lock:
            if self._cursor >= len(self._script):
                raise ScriptExhausted(
                    f"scripted backend exhausted after {len(self._script)} responses"
                )
            text = self._script[self._cursor]
            self._cursor += 1
            return text


# Wire roles for the chat-completions shape; tool observations travel as
# user turns because most chat APIs reject unknown roles.
_WIRE_ROLE = {"user": "user", "agent": "assistant", "system": "system", "tool": "user"}


class RemoteChatBackend(Backend):
    """Chat-completions-style HTTP backend (hosted or local model server)."""

    def __init__(
        self,
        endpoint: str,
        model_name: str,
        context_window_tokens: int = 8192,
        timeout: float = 120.0,
    ) -> None:
        super().__init__(context_window_tokens)
        self.endpoint = endpoint
        self.model_name = model_name
        self.timeout = timeout

    def _complete(self, request: CompletionRequest) -> str:
        messages = [{"role": "system", "content": request.system_block}]
        for role, text in request.messages:
            wire_role = _WIRE_ROLE.get(role, "user")
            content = f"Observation:\n{text}" if role == "tool" else text
            messages.append({"role": wire_role, "content": content})
        body = {
            "model": self.model_name,
            "messages": messages,
            "stop": request.stop_sequences,
            "max_tokens": request.max_output_tokens,
        }
        try:
            response = requests.post(self.endpoint, json=body, timeout=self.timeout)
            response.raise_for_status()
            payload = response.json()
            return payload["choices"][0]["message"]["content"]
        except (requests.RequestException, ValueError, KeyError, IndexError) as exc:
            raise BackendUnreachable(f"chat backend call failed: {exc}") from exc


def build_backend(descriptor: BackendDescriptor, context_window_tokens: int = 8192) -> Backend:
    if descriptor.kind == BackendKind.SCRIPTED:
        return ScriptedBackend(descriptor.script, context_window_tokens)
    if descriptor.kind == BackendKind.REMOTE_CHAT_API:
        if not descriptor.endpoint:
            raise DataClawError("remote backend requires an endpoint URL")
        return RemoteChatBackend(descriptor.endpoint, descriptor.model_name, context_window_tokens)
    raise DataClawError(f"unknown backend kind {descriptor.kind!r}")


def load_script(path: str) -> list[str]:
    """Load a scripted backend's responses from a JSON array of strings."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list) or not all(isinstance(item, str) for item in data):
        raise DataClawError(f"script file {path} must be a JSON array of strings")
    return data


# ---------------------------------------------------------------------------
# Summarization
# ---------------------------------------------------------------------------

_SUMMARY_PROMPT = (
    "Summarize the following conversation for your own future context. "
    "Keep datasets, findings, numbers, and file paths. Be concise."
)


def deterministic_summary(messages: list[ChatMessage], budget_tokens: int) -> str:
    """Offline summary: one `role: first-80-chars` line per message, budget-cut."""
    lines = [f"{m.role.value}: {m.text[:80]}" for m in messages]
    return truncate_to_tokens("\n".join(lines), budget_tokens)


def summarize(backend: Backend, messages: list[ChatMessage], budget_tokens: int) -> str:
    """Compress `messages` into a summary of at most `budget_tokens` tokens.

    Scripted backends use the deterministic line summary so compaction is
    reproducible offline; remote backends are prompted for a real summary,
    which is then cut to the budget.
    """
    if not messages:
        raise ValueError("summarize requires at least one message")
    if isinstance(backend, ScriptedBackend) or backend is None:
        return deterministic_summary(messages, budget_tokens)
    transcript = "\n".join(f"{m.role.value}: {m.text}" for m in messages)
    request = CompletionRequest(
        system_block=_SUMMARY_PROMPT,
        messages=[(Role.USER.value, transcript)],
        max_output_tokens=max(budget_tokens, 1),
    )
    result = backend.complete(request)
    return truncate_to_tokens(result.text, budget_tokens)
