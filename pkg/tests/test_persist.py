import os

import pytest

from dataclaw.core import AgentEvent, EventKind, IoFailure, PathEscape
from dataclaw.persist import (
    ArtifactStore,
    TranscriptError,
    TranscriptWriter,
    init_workspace,
    is_initialized,
    read_transcript,
)

from .conftest import fake_clock, fake_ids


def event(seq, kind=EventKind.THINKING, payload=None):
    return AgentEvent(
        seq=seq, session_id="s1", kind=kind,
        payload=payload if payload is not None else {"n": seq},
        timestamp=f"2025-06-01T00:00:00.{seq:03d}Z",
    )


class TestInit:
    def test_fresh_layout(self, tmp_path):
        layout = init_workspace(tmp_path / "ws")
        assert os.path.isdir(layout.skills_dir)
        assert os.path.isdir(layout.data_dir)
        assert open(layout.memory_path).read() == "# MEMORY\n"
        assert "## Preferences" in open(layout.souls_path).read()
        assert os.path.isfile(layout.config_path)
        assert is_initialized(layout.root)

    def test_idempotent_no_mtime_change(self, tmp_path):
        layout = init_workspace(tmp_path / "ws")
        with open(layout.memory_path, "a") as fh:
            fh.write("- note: precious\n")
        stats = {
            p: os.stat(p).st_mtime_ns
            for p in (layout.config_path, layout.memory_path, layout.souls_path)
        }
        init_workspace(tmp_path / "ws")
        for path, mtime in stats.items():
            assert os.stat(path).st_mtime_ns == mtime
        assert "precious" in open(layout.memory_path).read()

    def test_uncreatable_root_fails(self, tmp_path):
        # a regular file where a parent directory must go
        blocked = tmp_path / "blocked"
        blocked.write_text("file, not dir")
        with pytest.raises(IoFailure):
            init_workspace(blocked / "ws")


class TestTranscript:
    def test_line_per_event_roundtrip(self, tmp_path):
        layout = init_workspace(tmp_path / "ws")
        writer = TranscriptWriter(layout, "s1")
        events = [
            event(1, EventKind.SESSION_START, {"turn": 1, "user_text": "hi"}),
            event(2, EventKind.THINKING, {"step": 1, "text": "hm"}),
            event(3, EventKind.MESSAGE, {"text": "done"}),
            event(4, EventKind.DONE, {"turn": 1, "steps": 1}),
        ]
        for e in events:
            writer.append(e)
        writer.close()
        path = layout.transcript_path("s1")
        assert sum(1 for _ in open(path)) == len(events)
        assert read_transcript(path) == events

    def test_corrupt_line_numbered(self, tmp_path):
        layout = init_workspace(tmp_path / "ws")
        writer = TranscriptWriter(layout, "s1")
        writer.append(event(1))
        writer.close()
        path = layout.transcript_path("s1")
        with open(path, "a") as fh:
            fh.write("{not json\n")
        with pytest.raises(TranscriptError) as exc:
            read_transcript(path)
        assert exc.value.lineno == 2


class TestArtifacts:
    def store(self, tmp_path):
        layout = init_workspace(tmp_path / "ws")
        return ArtifactStore(layout, new_id=fake_ids(), now=fake_clock())

    def test_collision_suffix(self, tmp_path):
        store = self.store(tmp_path)
        a = store.save("s1", "chart.svg", b"one", "image/svg+xml")
        b = store.save("s1", "chart.svg", b"two", "image/svg+xml")
        assert a.relative_path.endswith("chart.svg")
        assert b.relative_path.endswith("chart-2.svg")
        c = store.save("s1", "chart.svg", b"three", "image/svg+xml")
        assert c.relative_path.endswith("chart-3.svg")

    def test_zero_byte_artifact(self, tmp_path):
        store = self.store(tmp_path)
        artifact = store.save("s1", "empty.txt", b"", "text/plain")
        assert artifact.byte_length == 0
        assert store.read_bytes(artifact) == b""

    def test_roundtrip_bytes(self, tmp_path):
        store = self.store(tmp_path)
        payload = bytes(range(256)) * 3
        artifact = store.save("s1", "blob.bin", payload, "application/octet-stream")
        assert store.read_bytes(artifact) == payload
        assert artifact.byte_length == len(payload)

    def test_name_with_separator_rejected(self, tmp_path):
        store = self.store(tmp_path)
        with pytest.raises(PathEscape):
            store.save("s1", "../evil.txt", b"x", "text/plain")
        with pytest.raises(PathEscape):
            store.save("s1", "a/b.txt", b"x", "text/plain")

    def test_lookup_by_id_and_name(self, tmp_path):
        store = self.store(tmp_path)
        artifact = store.save("s1", "chart.svg", b"x", "image/svg+xml")
        assert store.get(artifact.id) is artifact
        assert store.find_by_name("s1", "chart.svg") is artifact
        assert store.find_by_name("s2", "chart.svg") is None
