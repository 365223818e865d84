"""Deterministic discrete-event kernel: virtual clock, seeded randomness,
message latency, clock skew, crash and partition injection."""

from __future__ import annotations

import heapq
import random
from typing import Callable, Optional

# event kinds
MSG_ARRIVAL = "message-arrival"
EXEC_DONE = "execution-complete"
ROLLBACK_DONE = "rollback-complete"
TIMER = "timer"

WORLD = 0  # pseudo-target for events not addressed to a replica


class ConfigError(ValueError):
    """Invalid simulation or experiment configuration."""


class SimulationLimitError(RuntimeError):
    """Event-count safety limit exceeded (likely livelock in protocol logic)."""


class ProtocolViolation(AssertionError):
    """An internal protocol invariant that must be unreachable was violated."""


class Trace:
    """Append-only record stream; one line per recorded event."""

    __slots__ = ("records",)

    def __init__(self):
        self.records: list[tuple] = []  # (t, replica, kind, data dict)

    def add(self, t: float, replica: int, rec: str, **data) -> None:
        self.records.append((t, replica, rec, data))

    def lines(self) -> list[str]:
        out = []
        for t, replica, rec, data in self.records:
            detail = " ".join(f"{k}={data[k]!r}" for k in sorted(data))
            out.append(f"{t:.6f} r{replica} {rec} {detail}")
        return out

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"


class Kernel:
    """Virtual-time event loop. Equal fire times break ties by insertion order."""

    def __init__(self, seed: int, event_limit: int = 5_000_000):
        self.seed = seed
        self.now = 0.0
        self.events_processed = 0
        self._heap: list = []
        self._seq = 0
        self._limit = event_limit
        self._cancelled: set[int] = set()
        self._handlers: dict[int, Callable[[str, object], None]] = {}
        self._crash_time: dict[int, float] = {}
        self.trace = Trace()

    def rng(self, name: str) -> random.Random:
        return random.Random(f"{self.seed}/{name}")

    def register(self, target: int, handler: Callable[[str, object], None]) -> None:
        self._handlers[target] = handler

    def schedule(self, delay: float, target: int, kind: str, payload) -> int:
        if delay < 0:
            raise ConfigError(f"cannot schedule in the past (delay={delay})")
        self._seq += 1
        heapq.heappush(self._heap, (self.now + delay, self._seq, target, kind, payload))
        return self._seq

    def schedule_at(self, t: float, target: int, kind: str, payload) -> int:
        if t < self.now:
            raise ConfigError(f"cannot schedule in the past (t={t} < now={self.now})")
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, target, kind, payload))
        return self._seq

    def cancel(self, handle: int) -> None:
        self._cancelled.add(handle)

    def crash_at(self, replica: int, t: float) -> None:
        self._crash_time[replica] = t
        self.schedule_at(t, WORLD, TIMER, ("crash", replica))

    def crashed(self, replica: int, t: Optional[float] = None) -> bool:
        ct = self._crash_time.get(replica)
        return ct is not None and (t if t is not None else self.now) >= ct

    def run(self, until: Optional[float] = None) -> None:
        heap = self._heap
        while heap:
            t, seq, target, kind, payload = heap[0]
            if until is not None and t > until:
                break
            heapq.heappop(heap)
            if seq in self._cancelled:
                self._cancelled.discard(seq)
                continue
            assert t >= self.now, "virtual time went backwards"
            self.now = t
            self.events_processed += 1
            if self.events_processed > self._limit:
                raise SimulationLimitError(
                    f"event limit {self._limit} exceeded at t={t:.3f} "
                    f"(kind={kind}, target={target}); likely livelock"
                )
            if target != WORLD and self.crashed(target):
                continue  # crash-stop: no observable effect at a crashed replica
            if target == WORLD and kind == TIMER and payload[0] == "crash":
                self.trace.add(t, payload[1], "crash")
                continue
            handler = self._handlers.get(target)
            if handler is not None:
                handler(kind, payload)
        if until is not None and self.now < until:
            self.now = until


class Clocks:
    """Per-replica local clocks: fixed signed skew, monotone non-decreasing."""

    def __init__(self, kernel: Kernel, n: int, skew_ms: float):
        rng = kernel.rng("skew")
        self._kernel = kernel
        self.skew = {i: rng.uniform(-skew_ms, skew_ms) if skew_ms else 0.0
                     for i in range(1, n + 1)}
        self._last = {i: float("-inf") for i in range(1, n + 1)}

    def now(self, replica: int) -> float:
        t = self._kernel.now + self.skew[replica]
        if t <= self._last[replica]:
            t = self._last[replica] + 1e-9
        self._last[replica] = t
        return t


class Network:
    """Latency model plus partition windows; drops messages across active
    partition boundaries (the gossip layer re-delivers after healing)."""

    def __init__(self, kernel: Kernel, n: int, latency_low: float, latency_high: float):
        if latency_low > latency_high:
            raise ConfigError("latency_low must be <= latency_high")
        self.kernel = kernel
        self.n = n
        self.latency_low = latency_low
        self.latency_high = latency_high
        self._rng = kernel.rng("net")
        self._windows: list[tuple[float, float, dict[int, int]]] = []
        self.msg_count: dict[str, int] = {}
        self.msg_bytes: dict[str, int] = {}
        self.dropped = 0
        self.latency_fn: Optional[Callable[[int, int, str], float]] = None  # test hook

    def set_partition(self, groups: list[list[int]], t_from: float, t_to: float) -> None:
        if t_from >= t_to:
            raise ConfigError("partition window requires from < to")
        seen: set[int] = set()
        member: dict[int, int] = {}
        for gi, group in enumerate(groups):
            for r in group:
                if r in seen:
                    raise ConfigError(f"overlapping partition groups: replica {r}")
                seen.add(r)
                member[r] = gi
        if seen != set(range(1, self.n + 1)):
            raise ConfigError("partition groups must cover all replicas")
        self._windows.append((t_from, t_to, member))
        self.kernel.schedule_at(t_from, WORLD, TIMER, ("noop",))
        self.kernel.trace.add(t_from, WORLD, "partition-start",
                              groups=tuple(tuple(g) for g in groups), until=t_to)

    def group_of(self, replica: int, t: float) -> int:
        for t_from, t_to, member in self._windows:
            if t_from <= t < t_to:
                return member[replica]
        return 0

    def partitioned(self, a: int, b: int, t: float) -> bool:
        return self.group_of(a, t) != self.group_of(b, t)

    def sample_latency(self, src: int, dst: int, channel: str = "") -> float:
        assert src != dst
        if self.latency_fn is not None:
            return self.latency_fn(src, dst, channel)
        return self._rng.uniform(self.latency_low, self.latency_high)

    def send(self, src: int, dst: int, channel: str, body, size: int) -> None:
        k = self.kernel
        if k.crashed(src):
            return  # a crashed replica emits nothing
        lat = self.sample_latency(src, dst, channel)
        t_arr = k.now + lat
        if self.partitioned(src, dst, k.now) or self.partitioned(src, dst, t_arr):
            self.dropped += 1
            return
        self.msg_count[channel] = self.msg_count.get(channel, 0) + 1
        self.msg_bytes[channel] = self.msg_bytes.get(channel, 0) + size
        k.schedule_at(t_arr, dst, MSG_ARRIVAL, (channel, src, body))

    def broadcast(self, src: int, channel: str, body, size: int) -> None:
        for dst in range(1, self.n + 1):
            if dst != src:
                self.send(src, dst, channel, body, size)
