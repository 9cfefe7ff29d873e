"""Message queues connecting the agent workers, plus the framed wire format.

Each queue is safe for one producer and one consumer and enforces a
delivery policy:

* ``block``       - producer waits while the queue is full;
* ``drop_oldest`` - the oldest undelivered item is discarded on overflow;
* ``latest_wins`` - a new publish supersedes every undelivered item, so
  the consumer only ever sees the freshest payload.

Counters satisfy ``published == delivered + dropped + len(queue)`` at all
times. The wire format frames the canonical JSON of an envelope behind a
4-byte big-endian length so the same payload sequence can cross process
boundaries byte-exactly.
"""

from __future__ import annotations

import json
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterator, Optional

from .core import StreamSentryError, canonical_json

BLOCK = "block"
DROP_OLDEST = "drop_oldest"
LATEST_WINS = "latest_wins"
POLICIES = (BLOCK, DROP_OLDEST, LATEST_WINS)

Q1_CAPTIONS = "Q1_captions"
Q2_SUMMARIES = "Q2_summaries"
Q3_DECISIONS = "Q3_decisions"


class BusError(StreamSentryError):
    pass


class KindMismatch(BusError):
    """Payload kind does not match the queue."""


class QueueClosed(BusError):
    """End-of-stream: the queue is closed and fully drained."""


@dataclass(frozen=True)
class QueuePolicy:
    name: str
    capacity: int
    overflow: str

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {self.capacity}")
        if self.overflow not in POLICIES:
            raise ValueError(f"overflow must be one of {POLICIES}, got {self.overflow!r}")


def default_policies() -> dict[str, QueuePolicy]:
    return {
        Q1_CAPTIONS: QueuePolicy(Q1_CAPTIONS, capacity=16, overflow=BLOCK),
        Q2_SUMMARIES: QueuePolicy(Q2_SUMMARIES, capacity=1, overflow=LATEST_WINS),
        Q3_DECISIONS: QueuePolicy(Q3_DECISIONS, capacity=4096, overflow=DROP_OLDEST),
    }


@dataclass(frozen=True)
class Envelope:
    seq: int
    produced_ts_us: int
    kind: str
    payload: dict

    def to_wire(self) -> bytes:
        body = canonical_json(
            {
                "seq": self.seq,
                "produced_ts_us": self.produced_ts_us,
                "kind": self.kind,
                "payload": self.payload,
            }
        ).encode("utf-8")
        return struct.pack(">I", len(body)) + body

    @classmethod
    def from_body(cls, body: bytes) -> "Envelope":
        d = json.loads(body.decode("utf-8"))
        return cls(
            seq=int(d["seq"]),
            produced_ts_us=int(d["produced_ts_us"]),
            kind=str(d["kind"]),
            payload=d["payload"],
        )


def _wall_us() -> int:
    return time.time_ns() // 1000


class MessageQueue:
    """Policy-governed bounded queue carrying kind-tagged envelopes."""

    def __init__(
        self,
        policy: QueuePolicy,
        kind: str,
        now_us: Callable[[], int] = _wall_us,
    ):
        self.policy = policy
        self.kind = kind
        self._now_us = now_us
        self._items: deque[Envelope] = deque()
        self._lock = threading.Lock()
        self._not_empty = threading.Condition(self._lock)
        self._not_full = threading.Condition(self._lock)
        self._next_seq = 0
        self._closed = False
        self.published = 0
        self.delivered = 0
        self.dropped = 0

    def publish(self, payload: dict, kind: str, produced_ts_us: Optional[int] = None) -> int:
        """Enqueue per policy and return the assigned sequence number."""
        if kind != self.kind:
            raise KindMismatch(f"queue {self.policy.name} carries {self.kind}, got {kind}")
        with self._lock:
            if self._closed:
                raise QueueClosed(f"queue {self.policy.name} is closed")
            if self.policy.overflow == BLOCK:
                while len(self._items) >= self.policy.capacity:
                    self._not_full.wait()
                    if self._closed:
                        raise QueueClosed(f"queue {self.policy.name} is closed")
            elif self.policy.overflow == DROP_OLDEST:
                while len(self._items) >= self.policy.capacity:
                    self._items.popleft()
                    self.dropped += 1
            else:  # LATEST_WINS: supersede everything undelivered
                self.dropped += len(self._items)
                self._items.clear()
            env = Envelope(
                seq=self._next_seq,
                produced_ts_us=produced_ts_us if produced_ts_us is not None else self._now_us(),
                kind=kind,
                payload=payload,
            )
            self._next_seq += 1
            self.published += 1
            self._items.append(env)
            self._not_empty.notify()
            return env.seq

    def consume(self, timeout: Optional[float] = None) -> Envelope:
        """Next envelope per policy; blocks while empty, raises QueueClosed at EOS."""
        with self._lock:
            deadline = None if timeout is None else time.monotonic() + timeout
            while not self._items:
                if self._closed:
                    raise QueueClosed(f"queue {self.policy.name} is closed")
                if deadline is None:
                    self._not_empty.wait()
                else:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0 or not self._not_empty.wait(remaining):
                        if self._closed and not self._items:
                            raise QueueClosed(f"queue {self.policy.name} is closed")
                        raise TimeoutError(f"queue {self.policy.name} empty after {timeout}s")
            env = self._items.popleft()
            self.delivered += 1
            self._not_full.notify()
            return env

    def try_consume(self) -> Optional[Envelope]:
        """Non-blocking poll; None when empty, QueueClosed at end of stream."""
        with self._lock:
            if not self._items:
                if self._closed:
                    raise QueueClosed(f"queue {self.policy.name} is closed")
                return None
            env = self._items.popleft()
            self.delivered += 1
            self._not_full.notify()
            return env

    def close(self) -> None:
        with self._lock:
            self._closed = True
            self._not_empty.notify_all()
            self._not_full.notify_all()

    @property
    def closed(self) -> bool:
        with self._lock:
            return self._closed

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)

    def counters(self) -> dict[str, int]:
        with self._lock:
            return {
                "published": self.published,
                "delivered": self.delivered,
                "dropped": self.dropped,
                "in_flight": len(self._items),
            }


def wire_encode(envelopes: Iterator[Envelope] | list[Envelope]) -> bytes:
    return b"".join(env.to_wire() for env in envelopes)


def wire_decode(stream) -> Iterator[Envelope]:
    """Decode framed envelopes from a binary file-like object until EOF."""
    while True:
        header = _read_exact(stream, 4)
        if header is None:
            return
        (length,) = struct.unpack(">I", header)
        body = _read_exact(stream, length)
        if body is None:
            raise BusError("truncated wire frame")
        yield Envelope.from_body(body)


def _read_exact(stream, n: int) -> Optional[bytes]:
    chunks = b""
    while len(chunks) < n:
        got = stream.read(n - len(chunks))
        if not got:
            if chunks:
                raise BusError("truncated wire frame")
            return None
        chunks += got
    return chunks


class WireBridge:
    """Pumps one queue's deliveries over a socket into a remote twin.

    The sender side drains ``source`` and writes frames; the receiver side
    reads frames and republishes into ``sink`` (payloads and seq order are
    preserved bit-exactly, letting a consumer run in another process).
    """

    def __init__(self, source: MessageQueue, sock_send, sink: MessageQueue, sock_recv):
        self._source = source
        self._sink = sink
        self._sock_send = sock_send
        self._sock_recv = sock_recv
        self._threads: list[threading.Thread] = []

    def start(self) -> None:
        t_send = threading.Thread(target=self._pump_out, name="wire-send", daemon=True)
        t_recv = threading.Thread(target=self._pump_in, name="wire-recv", daemon=True)
        self._threads = [t_send, t_recv]
        for t in self._threads:
            t.start()

    def join(self, timeout: Optional[float] = None) -> None:
        for t in self._threads:
            t.join(timeout)

    def _pump_out(self) -> None:
        try:
            while True:
                env = self._source.consume()
                self._sock_send.sendall(env.to_wire())
        except QueueClosed:
            try:
                self._sock_send.shutdown(1)  # SHUT_WR
            except OSError:
                pass

    def _pump_in(self) -> None:
        reader = self._sock_recv.makefile("rb")
        try:
            for env in wire_decode(reader):
                self._sink.publish(env.payload, kind=env.kind, produced_ts_us=env.produced_ts_us)
        finally:
            reader.close()
            self._sink.close()
