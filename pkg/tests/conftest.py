import itertools
import shutil
from pathlib import Path

import pytest

from dataclaw.core import AgentConfig
from dataclaw.persist import WorkspaceLayout, init_workspace

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"


def fake_clock():
    """Deterministic ISO timestamps: one millisecond per call."""
    counter = itertools.count()

    def now() -> str:
        ms = next(counter)
        seconds, millis = divmod(ms, 1000)
        minutes, seconds = divmod(seconds, 60)
        return f"2025-06-01T00:{minutes:02d}:{seconds:02d}.{millis:03d}Z"

    return now


def fake_ids():
    """Deterministic 32-hex-char id factory."""
    counter = itertools.count(1)

    def make() -> str:
        return f"{next(counter):032x}"

    return make


@pytest.fixture
def workspace(tmp_path) -> WorkspaceLayout:
    layout = init_workspace(tmp_path / "ws")
    shutil.copy(FIXTURES / "taxi.csv", Path(layout.data_dir) / "taxi.csv")
    return layout


@pytest.fixture
def config() -> AgentConfig:
    return AgentConfig()


def deterministic_runtime(workspace, backend_factory, config=None):
    """Runtime with a frozen clock, counting ids, and no real sleeping."""
    from dataclaw.runtime import AgentRuntime

    return AgentRuntime(
        workspace,
        config or AgentConfig(),
        backend_factory,
        now=fake_clock(),
        new_id=fake_ids(),
        sleep=lambda seconds: None,
    )
