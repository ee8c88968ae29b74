import json
import threading

import pytest
from hypothesis import given, strategies as st

from dataclaw.core import ChatMessage, Role
from dataclaw.llm import (
    BackendDescriptor,
    BackendKind,
    BudgetExceeded,
    CompletionRequest,
    RemoteChatBackend,
    ScriptExhausted,
    ScriptedBackend,
    build_backend,
    deterministic_summary,
    estimate_tokens,
    summarize,
    truncate_to_tokens,
)


def message(text, role=Role.USER):
    return ChatMessage(
        id="m1", session_id="s", channel_id="c", role=role, text=text, timestamp="t"
    )


class TestEstimator:
    def test_empty(self):
        assert estimate_tokens("") == 0

    def test_exactly_four_bytes(self):
        assert estimate_tokens("abcd") == 1

    def test_five_bytes_round_up(self):
        assert estimate_tokens("abcde") == 2

    @given(st.text(max_size=400))
    def test_matches_byte_count_oracle(self, text):
        byte_length = len(text.encode("utf-8"))
        expected = (byte_length + 3) // 4
        assert estimate_tokens(text) == expected

    @given(st.text(max_size=200), st.text(max_size=200))
    def test_subadditive(self, a, b):
        assert estimate_tokens(a + b) <= estimate_tokens(a) + estimate_tokens(b) + 1

    @given(st.text(max_size=200), st.integers(min_value=0, max_value=64))
    def test_truncate_respects_budget(self, text, budget):
        assert estimate_tokens(truncate_to_tokens(text, budget)) <= budget


class TestScriptedBackend:
    def test_single_element_replay(self):
        backend = ScriptedBackend(["FINAL: hi"])
        result = backend.complete(CompletionRequest(system_block="", messages=[]))
        assert result.text == "FINAL: hi"

    def test_exhaustion(self):
        backend = ScriptedBackend(["only"])
        backend.complete(CompletionRequest(system_block="", messages=[]))
        with pytest.raises(ScriptExhausted):
            backend.complete(CompletionRequest(system_block="", messages=[]))

    def test_budget_exceeded(self):
        backend = ScriptedBackend(["x"], context_window_tokens=8192)
        big = "a" * (8192 * 4 + 1)
        with pytest.raises(BudgetExceeded):
            backend.complete(CompletionRequest(system_block=big, messages=[]))
        # oracle: the same text is within budget once one byte shorter
        backend.complete(CompletionRequest(system_block=big[:-1], messages=[]))

    def test_deterministic_across_instances(self):
        script = ["one", "two", "three"]
        outs = []
        for _ in range(2):
            backend = ScriptedBackend(script)
            outs.append(
                [
                    backend.complete(CompletionRequest(system_block="", messages=[])).text
                    for _ in range(3)
                ]
            )
        assert outs[0] == outs[1] == script

    def test_concurrent_cursor_hands_out_each_response_once(self):
        script = [f"r{i}" for i in range(40)]
        backend = ScriptedBackend(script)
        seen = []
        lock = threading.Lock()

        def worker():
            for _ in range(10):
                text = backend.complete(CompletionRequest(system_block="", messages=[])).text
                with lock:
                    seen.append(text)

        threads = [threading.Thread(target=worker) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(seen) == sorted(script)


class TestRemoteBackend:
    def test_wire_shape(self, httpserver=None):
        # fake chat server on a loopback socket
        import http.server

        received = {}

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers["Content-Length"])
                received["body"] = json.loads(self.rfile.read(length))
                payload = json.dumps(
                    {"choices": [{"message": {"content": "FINAL: remote says hi"}}]}
                ).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        server = http.server.HTTPServer(("127.0.0.1", 0), Handler)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            url = f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
            backend = RemoteChatBackend(url, "test-model")
            request = CompletionRequest(
                system_block="sys",
                messages=[("user", "hello"), ("agent", "prior"), ("tool", "obs")],
                stop_sequences=["STOP"],
                max_output_tokens=77,
            )
            result = backend.complete(request)
        finally:
            server.shutdown()
        assert result.text == "FINAL: remote says hi"
        body = received["body"]
        assert body["model"] == "test-model"
        assert body["stop"] == ["STOP"]
        assert body["max_tokens"] == 77
        assert body["messages"][0] == {"role": "system", "content": "sys"}
        assert body["messages"][1] == {"role": "user", "content": "hello"}
        assert body["messages"][2] == {"role": "assistant", "content": "prior"}
        assert body["messages"][3] == {"role": "user", "content": "Observation:\nobs"}

    def test_unreachable(self):
        from dataclaw.llm import BackendUnreachable

        backend = RemoteChatBackend("http://127.0.0.1:9/none", "m", timeout=0.2)
        with pytest.raises(BackendUnreachable):
            backend.complete(CompletionRequest(system_block="", messages=[]))


class TestBuildBackend:
    def test_scripted(self):
        backend = build_backend(BackendDescriptor(kind=BackendKind.SCRIPTED, script=["a"]))
        assert isinstance(backend, ScriptedBackend)

    def test_remote_requires_endpoint(self):
        from dataclaw.core import DataClawError

        with pytest.raises(DataClawError):
            build_backend(BackendDescriptor(kind=BackendKind.REMOTE_CHAT_API))


class TestSummarize:
    def test_single_message_under_budget(self):
        out = summarize(ScriptedBackend([]), [message("hello")], 100)
        assert out == "user: hello"

    def test_three_long_messages_budget_20(self):
        messages = [message("x" * 200) for _ in range(3)]
        out = summarize(ScriptedBackend([]), messages, 20)
        assert len(out.encode("utf-8")) == 80
        assert estimate_tokens(out) == 20

    def test_empty_messages_rejected(self):
        with pytest.raises(ValueError):
            summarize(ScriptedBackend([]), [], 10)

    def test_first_80_chars_per_line(self):
        messages = [message("a" * 100), message("b" * 10, role=Role.AGENT)]
        out = deterministic_summary(messages, 1000)
        assert out == f"user: {'a' * 80}\nagent: {'b' * 10}"

    @given(
        st.lists(st.text(min_size=0, max_size=120), min_size=1, max_size=6),
        st.integers(min_value=1, max_value=60),
    )
    def test_budget_always_respected(self, texts, budget):
        messages = [message(t) for t in texts]
        assert estimate_tokens(deterministic_summary(messages, budget)) <= budget
