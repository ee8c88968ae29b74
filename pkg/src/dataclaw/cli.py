"""Operator command line: init, serve, ask, replay.

Exit codes: 0 success, 1 configuration or I/O failure, 2 turn aborted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Callable

from .core import DataClawError, Session, Verbosity, load_config
from .gateway import build_app
from .llm import Backend, RemoteChatBackend, ScriptedBackend, load_script
from .persist import (
    WorkspaceLayout,
    init_workspace,
    is_initialized,
    read_transcript,
)
from .runtime import AgentRuntime
from .stream import verbosity_filter

BACKEND_KINDS = ("scripted", "remote")


def make_backend_factory(
    kind: str,
    *,
    script: list[str] | None = None,
    endpoint: str = "",
    model: str = "",
    context_window_tokens: int = 8192,
) -> Callable[[Session], Backend]:
    """Backend per session: scripted replays restart per session, remote is shared."""
    if kind == "scripted":
        cache: dict[str, ScriptedBackend] = {}

        def factory(session: Session) -> Backend:
            backend = cache.get(session.id)
            if backend is None:
                backend = ScriptedBackend(list(script or []), context_window_tokens)
                cache[session.id] = backend
            return backend

        return factory

    remote = RemoteChatBackend(endpoint, model, context_window_tokens)
    return lambda session: remote


def _build_runtime(args) -> AgentRuntime:
    if not is_initialized(args.workspace):
        raise DataClawError(
            f"{args.workspace} is not an initialized workspace (run `dataclaw init` first)"
        )
    workspace = WorkspaceLayout(root=os.path.abspath(args.workspace))
    config = load_config(workspace.config_path)
    if args.backend not in BACKEND_KINDS:
        raise DataClawError(
            f"unknown backend {args.backend!r}; valid kinds: {', '.join(BACKEND_KINDS)}"
        )
    script = None
    if args.backend == "scripted":
        if not args.script:
            raise DataClawError("scripted backend requires --script FILE")
        script = load_script(args.script)
    elif not args.endpoint:
        raise DataClawError("remote backend requires --endpoint URL")
    factory = make_backend_factory(
        args.backend,
        script=script,
        endpoint=args.endpoint,
        model=args.model,
        context_window_tokens=config.context_window_tokens,
    )
    return AgentRuntime(workspace, config, factory)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_init(args) -> int:
    already = is_initialized(args.path)
    try:
        layout = init_workspace(args.path)
    except DataClawError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if already:
        print(f"workspace at {layout.root} already initialized")
    else:
        print(f"initialized workspace at {layout.root}")
    for path in (
        layout.config_path,
        layout.memory_path,
        layout.agents_path,
        layout.souls_path,
        layout.skills_dir,
        layout.sessions_dir,
        layout.artifacts_dir,
        layout.data_dir,
    ):
        print(f"  {os.path.relpath(path, layout.root)}")
    return 0


def cmd_serve(args) -> int:
    try:
        runtime = _build_runtime(args)
    except DataClawError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        host, _, port_text = args.bind.rpartition(":")
        port = int(port_text)
        if not host:
            raise ValueError(args.bind)
    except ValueError:
        print(f"error: --bind must be host:port, got {args.bind!r}", file=sys.stderr)
        return 1

    app = build_app(runtime, console_dir=args.console_dir)
    bundles, _ = runtime.skills.active()
    print(
        f"serving workspace {runtime.workspace.root} on {host}:{port} "
        f"(backend={args.backend}, channels={sorted(runtime.channels)}, "
        f"skills={[b.name for b in bundles]}, capacity={runtime.sessions.limit})"
    )
    import uvicorn

    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except (OSError, SystemExit) as exc:
        print(f"error: could not serve on {args.bind}: {exc}", file=sys.stderr)
        return 1
    return 0


def cmd_ask(args) -> int:
    try:
        runtime = _build_runtime(args)
        session = runtime.new_session("console")
        trace = runtime.run_turn_blocking(session.id, args.text)
    except DataClawError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    state = runtime.state_of(session.id)
    if trace.outcome == "final":
        print(trace.final_text)
        for artifact in state.tool_ctx.artifacts_created:
            print(f"artifact: {artifact.relative_path}")
        return 0
    print(f"aborted: {trace.abort_reason}", file=sys.stderr)
    return 2


_PAYLOAD_RENDERERS = {
    "session_start": lambda p: f"turn={p.get('turn')}: {p.get('user_text', '')}",
    "thinking": lambda p: f"step={p.get('step')}: {p.get('text', '')}",
    "tool_call": lambda p: (
        f"step={p.get('step')} {p.get('tool')}: "
        f"{json.dumps(p.get('args', {}), ensure_ascii=True, separators=(',', ':'))}"
    ),
    "tool_result": lambda p: f"step={p.get('step')} {p.get('tool')}: {p.get('observation', '')}",
    "message": lambda p: p.get("text", ""),
    "artifact": lambda p: f"{p.get('path')} ({p.get('media_type')}, {p.get('byte_length')} bytes)",
    "error": lambda p: f"{p.get('reason')}: {p.get('detail', '')}",
    "done": lambda p: f"steps={p.get('steps')}",
}


def render_event_line(event) -> str:
    renderer = _PAYLOAD_RENDERERS.get(event.kind.value, lambda p: json.dumps(p))
    return f"[{event.seq}] {event.kind.value} {renderer(event.payload)}".rstrip()


def cmd_replay(args) -> int:
    try:
        level = Verbosity(args.verbosity)
    except ValueError:
        print(
            f"error: bad verbosity {args.verbosity!r}; "
            f"valid: {', '.join(v.value for v in Verbosity)}",
            file=sys.stderr,
        )
        return 1
    try:
        events = read_transcript(args.transcript)
    except DataClawError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for event in events:
        if verbosity_filter(level, event.kind):
            print(render_event_line(event))
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _add_backend_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", default="scripted", help="scripted or remote")
    parser.add_argument("--script", default="", help="JSON array of canned responses (scripted)")
    parser.add_argument("--endpoint", default="", help="chat-completions URL (remote)")
    parser.add_argument("--model", default="", help="model name (remote)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dataclaw", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_init = sub.add_parser("init", help="create or refresh a workspace skeleton")
    p_init.add_argument("path")
    p_init.set_defaults(func=cmd_init)

    p_serve = sub.add_parser("serve", help="run the gateway service")
    p_serve.add_argument("workspace")
    p_serve.add_argument("--bind", default="127.0.0.1:8787")
    p_serve.add_argument("--console-dir", default="", help="static console bundle to mount at /console")
    _add_backend_flags(p_serve)
    p_serve.set_defaults(func=cmd_serve)

    p_ask = sub.add_parser("ask", help="run a single turn on an ephemeral console session")
    p_ask.add_argument("workspace")
    p_ask.add_argument("text")
    _add_backend_flags(p_ask)
    p_ask.set_defaults(func=cmd_ask)

    p_replay = sub.add_parser("replay", help="render a session transcript")
    p_replay.add_argument("transcript")
    p_replay.add_argument("--verbosity", default=Verbosity.FULL_TRACE.value)
    p_replay.set_defaults(func=cmd_replay)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
