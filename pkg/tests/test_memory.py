import pytest
from hypothesis import given, strategies as st

from dataclaw.core import AgentConfig, ChatMessage, Role, Verbosity
from dataclaw.llm import ScriptedBackend, estimate_tokens, summarize
from dataclaw.memory import (
    COMPACTED_PREFIX,
    CompactionInsufficient,
    DataMemory,
    GlobalMemoryEntry,
    GlobalMemoryStore,
    maybe_compact,
)


def message(text, role=Role.USER, session_id="s1"):
    return ChatMessage(
        id="m", session_id=session_id, channel_id="c", role=role, text=text, timestamp="t"
    )


def summarizer(messages, budget):
    return summarize(ScriptedBackend([]), messages, budget)


def small_config(window=1000, threshold=0.8, keep=6):
    return AgentConfig(
        context_window_tokens=window,
        compaction_threshold=threshold,
        keep_recent_messages=keep,
    )


class TestAppend:
    def test_single_append(self):
        memory = DataMemory(session_id="s1")
        memory.append(message("hi"))
        assert memory.token_estimate == 1

    def test_two_four_byte_texts(self):
        memory = DataMemory(session_id="s1")
        memory.append(message("abcd"))
        memory.append(message("wxyz"))
        assert memory.token_estimate == 2

    def test_append_preserves_prefix(self):
        memory = DataMemory(session_id="s1")
        first = message("one")
        memory.append(first)
        memory.append(message("two"))
        assert memory.entries[0] is first

    @given(st.lists(st.text(max_size=100), max_size=30))
    def test_cache_equals_recount(self, texts):
        memory = DataMemory(session_id="s1")
        for text in texts:
            memory.append(message(text))
        assert memory.token_estimate == memory.recount()


class TestCompaction:
    def fill(self, memory, count, token_each=40):
        for i in range(count):
            memory.append(message("x" * (token_each * 4)))

    def test_below_threshold_untouched(self):
        memory = DataMemory(session_id="s1")
        self.fill(memory, 17, 40)  # 680 tokens < 800
        before = list(memory.entries)
        assert maybe_compact(memory, small_config(), summarizer) is None
        assert memory.entries == before

    def test_exact_threshold_does_not_fire(self):
        memory = DataMemory(session_id="s1")
        self.fill(memory, 20, 40)  # exactly 800 = 0.8 * 1000
        assert memory.token_estimate == 800
        assert maybe_compact(memory, small_config(), summarizer) is None

    def test_fires_over_threshold(self):
        memory = DataMemory(session_id="s1")
        self.fill(memory, 21, 40)  # 840 > 800
        record = maybe_compact(memory, small_config(), summarizer)
        assert record is not None
        assert record.tokens_before == 840
        assert record.tokens_after <= 800
        assert record.tokens_after < record.tokens_before
        assert memory.token_estimate == record.tokens_after == memory.recount()
        assert memory.compaction_count == 1

    def test_summary_is_first_entry_tagged(self):
        memory = DataMemory(session_id="s1")
        self.fill(memory, 21, 40)
        maybe_compact(memory, small_config(), summarizer)
        head = memory.entries[0]
        assert head.role == Role.SYSTEM
        assert head.text.startswith(COMPACTED_PREFIX)
        assert head.metadata.get("compacted") is True

    def test_recent_tail_verbatim(self):
        memory = DataMemory(session_id="s1")
        for i in range(21):
            memory.append(message(f"msg-{i:02d} " + "x" * 150))
        tail_before = [m.text for m in memory.entries[-6:]]
        maybe_compact(memory, small_config(), summarizer)
        assert [m.text for m in memory.entries[-6:]] == tail_before

    def test_idempotent_after_firing(self):
        memory = DataMemory(session_id="s1")
        self.fill(memory, 21, 40)
        assert maybe_compact(memory, small_config(), summarizer) is not None
        snapshot = [m.text for m in memory.entries]
        assert maybe_compact(memory, small_config(), summarizer) is None
        assert [m.text for m in memory.entries] == snapshot

    def test_insufficient_when_tail_too_large(self):
        memory = DataMemory(session_id="s1")
        # keep_recent=6 entries of 200 tokens: 1200 > 800 ceiling
        self.fill(memory, 7, 200)
        with pytest.raises(CompactionInsufficient):
            maybe_compact(memory, small_config(), summarizer)

    def test_insufficient_when_nothing_older(self):
        memory = DataMemory(session_id="s1")
        self.fill(memory, 6, 200)  # exactly keep_recent entries, all huge
        with pytest.raises(CompactionInsufficient):
            maybe_compact(memory, small_config(), summarizer)

    def test_previous_summary_is_recompacted_away(self):
        memory = DataMemory(session_id="s1")
        self.fill(memory, 21, 40)
        maybe_compact(memory, small_config(), summarizer)
        self.fill(memory, 20, 40)
        maybe_compact(memory, small_config(), summarizer)
        summaries = [m for m in memory.entries if m.metadata.get("compacted")]
        assert len(summaries) == 1
        assert memory.compaction_count == 2

    @given(st.lists(st.integers(min_value=1, max_value=120), min_size=1, max_size=40))
    def test_cache_consistency_through_compactions(self, sizes):
        memory = DataMemory(session_id="s1")
        config = small_config()
        for tokens in sizes:
            memory.append(message("y" * (tokens * 4)))
            try:
                maybe_compact(memory, config, summarizer)
            except CompactionInsufficient:
                pass
            assert memory.token_estimate == memory.recount()


class TestGlobalMemory:
    def test_bullet_appended_under_heading(self, tmp_path):
        store = GlobalMemoryStore(str(tmp_path))
        store.record_global(
            GlobalMemoryEntry("abc123", "2025-06-01T00:00:00.000Z", "finding",
                              "VendorID 2 trip had tip_pct 3000% (cash)")
        )
        content = store.read_file("MEMORY.md")
        assert content.startswith("# MEMORY\n")
        assert "## Session abc123 — 2025-06-01T00:00:00.000Z" in content
        assert "- finding: VendorID 2 trip had tip_pct 3000% (cash)\n" in content

    def test_two_sessions_two_headings(self, tmp_path):
        store = GlobalMemoryStore(str(tmp_path))
        store.record_global(GlobalMemoryEntry("aaa", "t1", "finding", "first"))
        store.record_global(GlobalMemoryEntry("bbb", "t2", "note", "second"))
        content = store.read_file("MEMORY.md")
        assert content.index("## Session aaa") < content.index("## Session bbb")

    def test_same_session_reuses_last_heading(self, tmp_path):
        store = GlobalMemoryStore(str(tmp_path))
        store.record_global(GlobalMemoryEntry("aaa", "t1", "finding", "first"))
        store.record_global(GlobalMemoryEntry("aaa", "t2", "finding", "second"))
        content = store.read_file("MEMORY.md")
        assert content.count("## Session aaa") == 1

    def test_interleaved_sessions_stay_append_only(self, tmp_path):
        store = GlobalMemoryStore(str(tmp_path))
        store.record_global(GlobalMemoryEntry("aaa", "t1", "finding", "first"))
        store.record_global(GlobalMemoryEntry("bbb", "t2", "finding", "second"))
        store.record_global(GlobalMemoryEntry("aaa", "t3", "finding", "third"))
        content = store.read_file("MEMORY.md")
        assert content.count("## Session aaa") == 2
        lines = content.splitlines()
        assert lines[-1] == "- finding: third"

    def test_newline_rejected(self, tmp_path):
        store = GlobalMemoryStore(str(tmp_path))
        with pytest.raises(ValueError):
            store.record_global(GlobalMemoryEntry("aaa", "t", "note", "two\nlines"))

    def test_append_only_prefix_property(self, tmp_path):
        store = GlobalMemoryStore(str(tmp_path))
        previous = ""
        for i in range(6):
            session = "aaa" if i % 2 == 0 else "bbb"
            store.record_global(GlobalMemoryEntry(session, f"t{i}", "note", f"entry {i}"))
            content = store.read_file("MEMORY.md")
            assert content.startswith(previous)
            previous = content

    def test_load_global_blocks_cold(self, tmp_path):
        assert GlobalMemoryStore(str(tmp_path)).load_global_blocks() == ("", "")

    def test_load_global_blocks_passthrough(self, tmp_path):
        (tmp_path / "AGENTS.md").write_text("Always answer in English.")
        (tmp_path / "SOULS.md").write_text("# SOULS\n\n## Preferences\n- terse\n- metric units\n- charts\n")
        instructions, persona = GlobalMemoryStore(str(tmp_path)).load_global_blocks()
        assert "Always answer in English." in instructions
        assert persona.count("- ") == 3


class TestMemorySearch:
    def seed(self, tmp_path):
        store = GlobalMemoryStore(str(tmp_path))
        store.record_global(
            GlobalMemoryEntry("s1", "t1", "finding", "VendorID 2 trip had tip_pct 3000% (cash)")
        )
        store.record_global(GlobalMemoryEntry("s1", "t2", "note", "fares cluster around 30"))
        store.record_global(GlobalMemoryEntry("s2", "t3", "finding", "tip averages look normal"))
        return store

    def test_planted_finding_ranks_first(self, tmp_path):
        store = self.seed(tmp_path)
        hits = store.memory_search("tip percentage vendor")
        assert hits
        assert "tip_pct 3000%" in hits[0].snippet
        assert hits[0].source.startswith("MEMORY.md :: Session s1")

    def test_no_match_is_empty(self, tmp_path):
        store = self.seed(tmp_path)
        assert store.memory_search("zebra quantum") == []

    def test_equal_scores_later_line_wins(self, tmp_path):
        store = GlobalMemoryStore(str(tmp_path))
        store.record_global(GlobalMemoryEntry("s1", "t1", "note", "alpha beta"))
        store.record_global(GlobalMemoryEntry("s1", "t2", "note", "alpha gamma"))
        hits = store.memory_search("alpha")
        assert [h.snippet for h in hits[:2]] == ["- note: alpha gamma", "- note: alpha beta"]

    def test_souls_bullets_are_searched(self, tmp_path):
        store = self.seed(tmp_path)
        store.write_file("SOULS.md", "# SOULS\n\n## Preferences\n- prefers terse answers\n")
        hits = store.memory_search("terse")
        assert hits and hits[0].source == "SOULS.md :: Preferences"

    def test_empty_query_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            GlobalMemoryStore(str(tmp_path)).memory_search("   ")

    def test_matches_naive_rescan_oracle(self, tmp_path):
        store = self.seed(tmp_path)
        query = "tip vendor cash"
        terms = {t for t in query.lower().split()}

        # independent oracle: rescan every line of both files by hand
        lines = []
        position = 0
        for name in ("MEMORY.md", "SOULS.md"):
            for line in store.read_file(name).splitlines():
                position += 1
                if line.startswith("- "):
                    score = sum(1 for t in terms if t in line.lower())
                    if score > 0:
                        lines.append((score, position, line))
        lines.sort(key=lambda item: (-item[0], -item[1]))
        expected = [line for _, _, line in lines[:5]]

        hits = store.memory_search(query, top_k=5)
        assert [h.snippet for h in hits] == expected
