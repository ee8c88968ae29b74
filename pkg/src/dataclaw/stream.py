"""Per-session event bus: replayable logs, verbosity-filtered fan-out, and
bit-exact SSE encoding.

Events are logged unfiltered per session; each subscription filters on its
own verbosity so a late full_trace subscriber still sees everything.
Subscriber queues are bounded; overflow drops the oldest event and the
consumer is handed a synthetic error event marking the gap.
"""

from __future__ import annotations

import json
import queue
import threading

from .core import AgentEvent, DataClawError, EventKind, UnknownSession, Verbosity


class SeqViolation(DataClawError):
    """An emitted event's seq did not extend the session log by one."""


SUBSCRIPTION_BUFFER = 1024

_FINAL_KINDS = {
    EventKind.SESSION_START,
    EventKind.MESSAGE,
    EventKind.ARTIFACT,
    EventKind.ERROR,
    EventKind.DONE,
}
_PROGRESS_KINDS = _FINAL_KINDS | {EventKind.TOOL_CALL, EventKind.TOOL_RESULT}
_FULL_KINDS = _PROGRESS_KINDS | {EventKind.THINKING}

_FILTER_TABLE = {
    Verbosity.FINAL_ONLY: _FINAL_KINDS,
    Verbosity.PROGRESS: _PROGRESS_KINDS,
    Verbosity.FULL_TRACE: _FULL_KINDS,
}


def verbosity_filter(level: Verbosity, kind: EventKind) -> bool:
    """True when events of `kind` are delivered at verbosity `level`."""
    return kind in _FILTER_TABLE[level]


def encode_sse(event: AgentEvent) -> bytes:
    """Encode one event as an SSE frame, byte-exactly.

    Frame: `id: <seq>` / `event: <kind>` / `data: <json>` / blank line.
    The data JSON carries session_id and timestamp first, then the payload
    keys in their documented per-kind order.
    """
    data = {"session_id": event.session_id, "timestamp": event.timestamp}
    data.update(event.payload)
    line = json.dumps(data, ensure_ascii=True, separators=(",", ":"))
    return f"id: {event.seq}\nevent: {event.kind.value}\ndata: {line}\n\n".encode("utf-8")


class Subscription:
    """One consumer's filtered view of a session's events.

    `get` first drains the replay snapshot, then blocks on the live queue.
    Buffer overflow surfaces as a synthetic error event carrying the seq
    range that was dropped.
    """

    def __init__(self, session_id: str, verbosity: Verbosity, replay: list[AgentEvent]) -> None:
        self.session_id = session_id
        self.verbosity = verbosity
        self.last_delivered_seq = 0
        self._replay = list(replay)
        self._queue: queue.Queue = queue.Queue(maxsize=SUBSCRIPTION_BUFFER)
        self._lock = threading.Lock()
        self._dropped: list[AgentEvent] = []
        self._closed = False

    def _offer(self, event: AgentEvent) -> None:
        with self._lock:
            try:
                self._queue.put_nowait(event)
            except queue.Full:
                try:
                    self._dropped.append(self._queue.get_nowait())
                except queue.Empty:
                    pass
                self._queue.put_nowait(event)

    def _take_gap_notice(self) -> AgentEvent | None:
        with self._lock:
            if not self._dropped:
                return None
            first, last = self._dropped[0], self._dropped[-1]
            notice = AgentEvent(
                seq=first.seq,
                session_id=self.session_id,
                kind=EventKind.ERROR,
                payload={
                    "reason": "subscriber_overflow",
                    "detail": f"dropped {len(self._dropped)} buffered events",
                    "first_seq": first.seq,
                    "last_seq": last.seq,
                },
                timestamp=first.timestamp,
            )
            self._dropped = []
            return notice

    def get(self, timeout: float | None = None) -> AgentEvent | None:
        """Next event, or None on timeout. Raises SubscriptionClosed at end."""
        if self._replay:
            event = self._replay.pop(0)
            self.last_delivered_seq = event.seq
            return event
        notice = self._take_gap_notice()
        if notice is not None:
            self.last_delivered_seq = notice.seq
            return notice
        if self._closed and self._queue.empty():
            raise SubscriptionClosed()
        try:
            event = self._queue.get(timeout=timeout)
        except queue.Empty:
            return None
        if event is _CLOSE:
            self._closed = True
            raise SubscriptionClosed()
        self.last_delivered_seq = event.seq
        return event

    def close(self) -> None:
        self._closed = True
        try:
            self._queue.put_nowait(_CLOSE)
        except queue.Full:
            pass

    def __iter__(self):
        while True:
            try:
                event = self.get(timeout=5.0)
            except SubscriptionClosed:
                return
            if event is not None:
                yield event


class SubscriptionClosed(Exception):
    """Raised by Subscription.get once the stream is finished."""


_CLOSE = object()


class _SessionLog:
    def __init__(self) -> None:
        self.events: list[AgentEvent] = []
        self.subscriptions: list[Subscription] = []
        self.lock = threading.Lock()


class EventBus:
    """Session-keyed event log with non-blocking fan-out."""

    def __init__(self) -> None:
        self._logs: dict[str, _SessionLog] = {}
        self._lock = threading.Lock()

    def register_session(self, session_id: str) -> None:
        with self._lock:
            self._logs.setdefault(session_id, _SessionLog())

    def _log(self, session_id: str) -> _SessionLog:
        with self._lock:
            log = self._logs.get(session_id)
        if log is None:
            raise UnknownSession(f"no session {session_id} on the bus")
        return log

    def emit(self, event: AgentEvent) -> None:
        log = self._log(event.session_id)
        with log.lock:
            expected = len(log.events) + 1
            if event.seq != expected:
                raise SeqViolation(
                    f"event seq {event.seq} does not follow {expected - 1} "
                    f"for session {event.session_id}"
                )
            log.events.append(event)
            for sub in log.subscriptions:
                if verbosity_filter(sub.verbosity, event.kind):
                    sub._offer(event)

    def subscribe(
        self,
        session_id: str,
        verbosity: Verbosity = Verbosity.PROGRESS,
        from_seq: int = 0,
    ) -> Subscription:
        """Replay logged events past `from_seq`, then deliver live ones.

        The snapshot and attachment happen under the session lock, so the
        replay/live boundary never duplicates or skips an event.
        """
        log = self._log(session_id)
        with log.lock:
            replay = [
                e
                for e in log.events
                if e.seq > from_seq and verbosity_filter(verbosity, e.kind)
            ]
            sub = Subscription(session_id, verbosity, replay)
            log.subscriptions.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        log = self._log(sub.session_id)
        with log.lock:
            if sub in log.subscriptions:
                log.subscriptions.remove(sub)
        sub.close()

    def events_of(self, session_id: str) -> list[AgentEvent]:
        log = self._log(session_id)
        with log.lock:
            return list(log.events)

    def last_seq(self, session_id: str) -> int:
        log = self._log(session_id)
        with log.lock:
            return log.events[-1].seq if log.events else 0
