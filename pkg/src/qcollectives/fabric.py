"""Deterministic simulated message-passing fabric.

Every rank runs the same program on its own thread. Ranks interact only
through per-(sender, receiver) FIFO channels and a shared barrier, and every
receive names its peer, so identical inputs always produce identical outputs
and ledgers regardless of thread scheduling. Payloads are bytes and are
copied on send; the ledger records exact byte and message counts per link.

Simulated time is not advanced here. Wall-clock cost is derived from the
ledger afterwards by the cost model, which keeps the fabric deterministic
and the latency model swappable.
"""

from __future__ import annotations

import csv
import io
import json
import queue
import threading
from dataclasses import dataclass
from typing import Any, Callable

from .errors import ConfigError, DomainError, ProtocolError

DEFAULT_BANDWIDTH = 64e9  # bytes/sec, PCIe-class link
DEFAULT_BASE_LATENCY = 10e-6  # sec/message step
DEFAULT_QDQ_COST = 6.5e-7  # sec per quantize-or-dequantize pass per MiB

_POLL_INTERVAL = 0.01


@dataclass(frozen=True)
class FabricTopology:
    """Flat homogeneous topology: every rank pair shares one link profile."""

    world_size: int
    link_bandwidth: float = DEFAULT_BANDWIDTH
    base_latency: float = DEFAULT_BASE_LATENCY
    qdq_cost: float = DEFAULT_QDQ_COST

    def __post_init__(self) -> None:
        if int(self.world_size) < 1:
            raise ConfigError(f"world_size must be >= 1, got {self.world_size}")
        if not (self.link_bandwidth > 0):
            raise ConfigError("link_bandwidth must be positive")
        if self.base_latency < 0 or self.qdq_cost < 0:
            raise ConfigError("latencies must be nonnegative")


@dataclass
class TrafficLedger:
    """Per-link byte/message counters plus a per-run phase counter."""

    bytes_sent: list[list[int]]
    messages: list[list[int]]
    steps: int = 0

    @classmethod
    def zeros(cls, n: int) -> "TrafficLedger":
        return cls(
            bytes_sent=[[0] * n for _ in range(n)],
            messages=[[0] * n for _ in range(n)],
        )

    @property
    def world_size(self) -> int:
        return len(self.bytes_sent)

    def rank_bytes_sent(self, rank: int) -> int:
        return sum(self.bytes_sent[rank])

    def total_bytes(self) -> int:
        return sum(map(sum, self.bytes_sent))

    def to_json_dict(self) -> dict:
        return {"bytes_sent": self.bytes_sent, "messages": self.messages, "steps": self.steps}

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["sender", "receiver", "bytes", "messages"])
        n = self.world_size
        for s in range(n):
            for r in range(n):
                if s != r:
                    w.writerow([s, r, self.bytes_sent[s][r], self.messages[s][r]])
        return out.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


class _AbortEcho(ProtocolError):
    """Secondary failure raised by ranks unwound after another rank failed."""


class _Channel:
    """FIFO link for one (sender, receiver) pair with its own counters."""

    __slots__ = ("q", "bytes_sent", "messages", "bytes_received", "received")

    def __init__(self) -> None:
        self.q: queue.Queue[bytes] = queue.Queue()
        self.bytes_sent = 0
        self.messages = 0
        self.bytes_received = 0
        self.received = 0


@dataclass
class RankContext:
    """Handle a rank program uses to talk to its peers."""

    rank: int
    world_size: int
    _fabric: "Fabric"

    def send(self, to: int, payload: bytes) -> None:
        self._fabric._send(self.rank, to, payload)

    def recv(self, source: int) -> bytes:
        return self._fabric._recv(self.rank, source)

    def barrier(self) -> None:
        self._fabric._barrier(self.rank)


class Fabric:
    """N concurrent logical ranks joined by FIFO channels."""

    def __init__(self, topology: FabricTopology, timeout: float = 5.0) -> None:
        self.topology = topology
        self.timeout = timeout
        n = topology.world_size
        self._channels = {
            (s, r): _Channel() for s in range(n) for r in range(n) if s != r
        }
        self._barrier_obj = threading.Barrier(n) if n > 1 else None
        self._abort = threading.Event()

    # ---- rank-side primitives ----

    def _check_peer(self, me: int, other: int) -> None:
        n = self.topology.world_size
        if not 0 <= other < n:
            raise DomainError(f"rank {other} outside world of size {n}")
        if other == me:
            raise DomainError("self-transfers must bypass the fabric")

    def _send(self, me: int, to: int, payload: bytes) -> None:
        self._check_peer(me, to)
        ch = self._channels[(me, to)]
        ch.q.put(bytes(payload))  # copy: sender may mutate its buffer after send
        ch.bytes_sent += len(payload)
        ch.messages += 1

    def _recv(self, me: int, source: int) -> bytes:
        self._check_peer(me, source)
        ch = self._channels[(source, me)]
        deadline = threading.TIMEOUT_MAX if self.timeout is None else self.timeout
        waited = 0.0
        while True:
            try:
                payload = ch.q.get(timeout=_POLL_INTERVAL)
                break
            except queue.Empty:
                if self._abort.is_set():
                    raise _AbortEcho(f"rank {me} aborted while receiving from rank {source}")
                waited += _POLL_INTERVAL
                if waited >= deadline:
                    self._abort.set()
                    raise ProtocolError(
                        f"deadlock: rank {me} timed out waiting on rank {source}"
                    ) from None
        ch.bytes_received += len(payload)
        ch.received += 1
        return payload

    def _barrier(self, me: int) -> None:
        if self._barrier_obj is None:
            return
        try:
            self._barrier_obj.wait(timeout=self.timeout)
        except threading.BrokenBarrierError:
            if self._abort.is_set():
                raise _AbortEcho(f"rank {me} left barrier after another rank failed") from None
            raise ProtocolError(f"barrier broken or timed out at rank {me}") from None

    # ---- orchestration ----

    def run(self, program: Callable[[RankContext], Any]) -> tuple[list[Any], TrafficLedger]:
        """Run `program` once per rank; returns per-rank outputs and the ledger."""
        n = self.topology.world_size
        outputs: list[Any] = [None] * n
        errors: dict[int, BaseException] = {}

        def worker(rank: int) -> None:
            try:
                outputs[rank] = program(RankContext(rank, n, self))
            except BaseException as exc:  # noqa: BLE001 - reported with rank attribution
                errors[rank] = exc
                self._abort.set()
                if self._barrier_obj is not None:
                    self._barrier_obj.abort()

        if n == 1:
            worker(0)
        else:
            threads = [
                threading.Thread(target=worker, args=(r,), name=f"rank-{r}", daemon=True)
                for r in range(n)
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()

        if errors:
            # abort echoes are fallout, not the cause; report the originator
            roots = {r: e for r, e in errors.items() if not isinstance(e, _AbortEcho)}
            rank = min(roots or errors)
            exc = errors[rank]
            if isinstance(exc, ProtocolError):
                raise exc
            raise ProtocolError(f"rank {rank} failed: {exc!r}") from exc

        ledger = TrafficLedger.zeros(n)
        unread = []
        for (s, r), ch in self._channels.items():
            ledger.bytes_sent[s][r] = ch.bytes_sent
            ledger.messages[s][r] = ch.messages
            if ch.received != ch.messages:
                unread.append((s, r, ch.messages - ch.received))
        if unread:
            raise ProtocolError(f"unconsumed messages at teardown: {unread}")
        return outputs, ledger


def run_ranks(
    topology: FabricTopology,
    program: Callable[[RankContext], Any],
    timeout: float = 5.0,
) -> tuple[list[Any], TrafficLedger]:
    """Convenience wrapper: build a fabric and run one program."""
    return Fabric(topology, timeout=timeout).run(program)
