"""Multi-tiered memory: rolling session context, threshold compaction, and
the persistent MEMORY.md / AGENTS.md / SOULS.md stores with keyword search.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from typing import Callable

from .core import (
    AgentConfig,
    ChatMessage,
    DataClawError,
    IoFailure,
    Role,
    utc_now_iso,
)
from .llm import estimate_tokens


class CompactionInsufficient(DataClawError):
    """Even the compacted state would exceed the threshold."""


COMPACTED_PREFIX = "[compacted memory] "
_COMPACTION_RESERVE_TOKENS = 64

MEMORY_FILE = "MEMORY.md"
AGENTS_FILE = "AGENTS.md"
SOULS_FILE = "SOULS.md"


# ---------------------------------------------------------------------------
# Session-level rolling memory
# ---------------------------------------------------------------------------

@dataclass
class DataMemory:
    """Ordered per-session message store with a cached token estimate."""

    session_id: str
    entries: list[ChatMessage] = field(default_factory=list)
    token_estimate: int = 0
    compaction_count: int = 0

    def append(self, message: ChatMessage) -> "DataMemory":
        self.entries.append(message)
        self.token_estimate += estimate_tokens(message.text)
        return self

    def recount(self) -> int:
        """From-scratch recount; must always equal the cached estimate."""
        return sum(estimate_tokens(m.text) for m in self.entries)


@dataclass
class CompactionRecord:
    fired_at: str
    messages_compacted: int
    tokens_before: int
    tokens_after: int
    summary_text: str


def maybe_compact(
    memory: DataMemory,
    config: AgentConfig,
    summarizer: Callable[[list[ChatMessage], int], str],
    *,
    now: Callable[[], str] = utc_now_iso,
) -> CompactionRecord | None:
    """Compact `memory` in place when it exceeds the configured threshold.

    Fires when the estimate strictly exceeds threshold * window. The last
    `keep_recent_messages` entries survive verbatim; everything older
    (including any previous summary) is replaced by a single system entry
    holding the summarizer's output, budgeted to keep the post-state under
    the threshold.
    """
    ceiling = config.compaction_threshold * config.context_window_tokens
    if memory.token_estimate <= ceiling:
        return None

    keep = config.keep_recent_messages
    recent = memory.entries[-keep:]
    older = memory.entries[:-keep]
    if not older:
        raise CompactionInsufficient(
            f"the {len(recent)} most recent messages alone exceed the "
            f"compaction ceiling of {ceiling:g} tokens"
        )
    recent_tokens = sum(estimate_tokens(m.text) for m in recent)
    budget = int(ceiling) - recent_tokens - _COMPACTION_RESERVE_TOKENS
    if budget <= 0:
        raise CompactionInsufficient(
            f"recent tail holds {recent_tokens} tokens, leaving no summary "
            f"budget under the ceiling of {ceiling:g}"
        )

    summary = summarizer(older, budget)
    summary_entry = ChatMessage(
        id=f"compacted-{memory.compaction_count + 1}",
        session_id=memory.session_id,
        channel_id="",
        role=Role.SYSTEM,
        text=COMPACTED_PREFIX + summary,
        timestamp=now(),
        metadata={"compacted": True},
    )
    tokens_before = memory.token_estimate
    tokens_after = estimate_tokens(summary_entry.text) + recent_tokens
    if tokens_after > ceiling:
        raise CompactionInsufficient(
            f"compacted state still holds {tokens_after} tokens over the "
            f"ceiling of {ceiling:g}"
        )

    record = CompactionRecord(
        fired_at=summary_entry.timestamp,
        messages_compacted=len(older),
        tokens_before=tokens_before,
        tokens_after=tokens_after,
        summary_text=summary,
    )
    memory.entries = [summary_entry] + recent
    memory.token_estimate = tokens_after
    memory.compaction_count += 1
    return record


# ---------------------------------------------------------------------------
# Persistent workspace memory files
# ---------------------------------------------------------------------------

@dataclass
class GlobalMemoryEntry:
    session_id: str
    recorded_at: str
    kind: str  # finding | artifact | note
    text: str


@dataclass
class SearchHit:
    score: int
    snippet: str
    source: str

    def to_dict(self) -> dict:
        return {"score": self.score, "snippet": self.snippet, "source": self.source}


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


class GlobalMemoryStore:
    """Serialized writer for MEMORY.md / AGENTS.md / SOULS.md.

    Writes go whole-file via temp+rename so readers never see partial
    states; a single lock serializes writers across sessions.
    """

    def __init__(self, root: str) -> None:
        self.root = str(root)
        self._lock = threading.Lock()

    def _path(self, name: str) -> str:
        return os.path.join(self.root, name)

    def read_file(self, name: str) -> str:
        path = self._path(name)
        if not os.path.exists(path):
            return ""
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return fh.read()
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc

    def write_file(self, name: str, text: str) -> None:
        with self._lock:
            _atomic_write(self._path(name), text)

    def record_global(self, entry: GlobalMemoryEntry) -> str:
        """Append one bullet to MEMORY.md under the session's heading.

        The file only ever grows: if the session's section is not the last
        one in the file, a fresh heading is appended rather than inserting
        into the middle.
        """
        if "\n" in entry.text or "\r" in entry.text:
            raise ValueError("global memory entries must be single-line")
        bullet = f"- {entry.kind}: {entry.text}\n"
        with self._lock:
            content = self.read_file(MEMORY_FILE)
            if not content:
                content = "# MEMORY\n"
            if not content.endswith("\n"):
                content += "\n"
            heading_prefix = f"## Session {entry.session_id} "
            last_heading = None
            for line in content.splitlines():
                if line.startswith("## "):
                    last_heading = line
            if last_heading is None or not last_heading.startswith(heading_prefix):
                content += f"\n## Session {entry.session_id} — {entry.recorded_at}\n"
            content += bullet
            _atomic_write(self._path(MEMORY_FILE), content)
        return bullet

    def load_global_blocks(self) -> tuple[str, str]:
        """Return (AGENTS.md text, SOULS.md text); missing files read as ""."""
        return self.read_file(AGENTS_FILE), self.read_file(SOULS_FILE)

    # -- retrieval ---------------------------------------------------------

    def memory_search(self, query: str, top_k: int = 5) -> list[SearchHit]:
        """Score every bullet of MEMORY.md and SOULS.md against the query.

        Score is the count of distinct lowercased query terms occurring as
        substrings of the lowercased line; ties go to the later line.
        """
        if not query.strip():
            raise ValueError("memory_search requires a non-empty query")
        terms = {t for t in query.lower().split() if t}
        scored: list[tuple[int, int, SearchHit]] = []
        position = 0
        for name in (MEMORY_FILE, SOULS_FILE):
            heading = ""
            for line in self.read_file(name).splitlines():
                position += 1
                if line.startswith("## "):
                    heading = line[3:].strip()
                    continue
                if not line.startswith("- "):
                    continue
                lowered = line.lower()
                score = sum(1 for t in terms if t in lowered)
                if score > 0:
                    source = f"{name} :: {heading}" if heading else name
                    scored.append((score, position, SearchHit(score, line, source)))
        scored.sort(key=lambda item: (-item[0], -item[1]))
        return [hit for _, _, hit in scored[:top_k]]
