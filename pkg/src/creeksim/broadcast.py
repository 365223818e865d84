"""Communication substrate: reliable broadcast by gossip with periodic
anti-entropy, and conditional atomic broadcast reduced to indirect consensus
(a single-coordinator Multi-Paxos on operation identifiers).

Acceptors never evaluate delivery predicates; only the proposer's local truth
and the per-replica delivery gate do. Acceptors send 2B to every replica, so a
decision is learnable three message delays after the identifier was cast.
"""

from __future__ import annotations

from collections import deque
from typing import Callable, Optional

from .dvv import DotSet
from .sim import MSG_ARRIVAL, TIMER, Kernel, Network, ProtocolViolation, Trace

# wire channels
GOSSIP = "gossip"
CAB_CTL = "cab-ctl"
ANTI_ENTROPY = "anti-entropy"
P1A, P1B, P2A, P2B = "paxos-1a", "paxos-1b", "paxos-2a", "paxos-2b"
DECIDE = "decide"
NACK = "paxos-nack"
HB = "heartbeat"

_PAXOS_CHANNELS = {P1A, P1B, P2A, P2B, DECIDE, NACK, HB}


class BroadcastNode:
    def __init__(self, i: int, n: int, kernel: Kernel, net: Network, trace: Trace,
                 ae_ms: float = 50.0, hb_ms: float = 25.0, leader_timeout_ms: float = 100.0):
        self.i = i
        self.n = n
        self.kernel = kernel
        self.net = net
        self.trace = trace
        self.ae_ms = ae_ms
        self.hb_ms = hb_ms
        self.leader_timeout_ms = leader_timeout_ms
        self.majority = n // 2 + 1

        # reliable broadcast
        self.next_seq = 0
        self.have = DotSet()
        self.store: dict[tuple, tuple] = {}   # (origin, seq) -> (payload, size)
        self.rb_handlers: dict[str, Callable] = {}

        # conditional atomic broadcast
        self.predicates: dict[str, Callable] = {}
        self.sort_keys: dict[str, Callable] = {}
        self.cab_meta: dict = {}        # id -> predicate name
        self.pending: dict = {}         # cast ids not yet seen in a decision
        self.queue: deque = deque()     # decided, undelivered ids in global order
        self.enqueued: set = set()
        self.delivered: set = set()
        self.decided_ids: set = set()
        self.on_cab_deliver: Optional[Callable] = None
        self.on_opt_batch: Optional[Callable] = None  # optimistic-delivery hook

        # consensus (acceptor)
        self.promised = (0, 1)
        self.accepted: dict[int, tuple] = {}  # k -> (ballot, v)
        self.decisions: dict[int, tuple] = {}
        self.next_enqueue = 1
        self.max_k = 0
        # consensus (coordinator)
        self.is_leader = i == 1
        self.phase1_ok = i == 1
        self.ballot = (0, 1)
        self.round = 0
        self.believed_leader = 1
        self.last_hb = 0.0
        self.next_k = 1
        self.inflight: set[int] = set()
        self._p1b: dict[int, tuple] = {}
        self._p2b: dict[tuple, set] = {}

        self.timers_enabled: Callable[[], bool] = lambda: True

    # -- wiring ----------------------------------------------------------------

    def register_rb_handler(self, tag: str, fn: Callable) -> None:
        self.rb_handlers[tag] = fn

    def register_predicate(self, name: str, fn: Callable, sort_key: Callable) -> None:
        self.predicates[name] = fn
        self.sort_keys[name] = sort_key

    def start_timers(self) -> None:
        self.kernel.schedule(self.ae_ms, self.i, TIMER, ("ae",))
        self.kernel.schedule(self.hb_ms, self.i, TIMER, ("hb",))

    # -- reliable broadcast ------------------------------------------------------

    def rb_cast(self, payload: tuple, size: int, channel: str = GOSSIP) -> None:
        """Gossip payload to all replicas; local delivery happens inline."""
        self.next_seq += 1
        dot = (self.i, self.next_seq)
        self.have.add(dot)
        self.store[dot] = (payload, size)
        self._dispatch_rb(payload)
        self.net.broadcast(self.i, channel, (dot, payload), size)

    def _on_gossip(self, body) -> None:
        dot, payload = body
        if dot in self.have:
            return  # at-most-once
        self.have.add(dot)
        self.store[dot] = (payload, _payload_size(payload))
        self.trace.add(self.kernel.now, self.i, "rb-deliver", dot=dot)
        self._dispatch_rb(payload)

    def _dispatch_rb(self, payload) -> None:
        tag = payload[0]
        if tag == "cab":
            self._on_cab_ctl(payload)
        else:
            handler = self.rb_handlers.get(tag)
            if handler is not None:
                handler(payload)
        self.try_deliver()
        self.maybe_propose()

    # -- anti-entropy ------------------------------------------------------------

    def _on_ae_timer(self) -> None:
        frontier = self.have.copy()
        body = ("frontier", frontier, self.next_enqueue)
        size = 16 * frontier.compressed_size() + 8
        self.net.broadcast(self.i, ANTI_ENTROPY, body, size)
        if self.timers_enabled():
            self.kernel.schedule(self.ae_ms, self.i, TIMER, ("ae",))

    def _on_frontier(self, src: int, body) -> None:
        _, peer_have, peer_next = body
        for dot in self.have.missing_from(peer_have):
            payload, size = self.store[dot]
            self.net.send(self.i, src, ANTI_ENTROPY, (dot, payload), size)
        for k in range(peer_next, self.next_enqueue):
            v = self.decisions.get(k)
            if v is not None:
                self.net.send(self.i, src, DECIDE, (k, v), 24 + 8 * len(v))

    # -- conditional atomic broadcast ----------------------------------------------

    def cab_cast(self, msg_id, predicate_name: str) -> None:
        if predicate_name not in self.predicates:
            raise ProtocolViolation(f"unknown predicate {predicate_name!r}")
        self.trace.add(self.kernel.now, self.i, "cab-cast", id=msg_id)
        self.rb_cast(("cab", msg_id, predicate_name), 16, CAB_CTL)

    def _on_cab_ctl(self, payload) -> None:
        _, msg_id, name = payload
        self.cab_meta[msg_id] = name
        if msg_id not in self.decided_ids:
            self.pending[msg_id] = name

    def _predicate_true(self, msg_id) -> bool:
        name = self.cab_meta.get(msg_id)
        if name is None:
            return False  # predicate unknown until the cast control arrives
        return self.predicates[name](msg_id)

    def try_deliver(self) -> list:
        """Pop the delivery-queue head while its predicate holds; never skips."""
        out = []
        while self.queue and self._predicate_true(self.queue[0]):
            msg_id = self.queue.popleft()
            if msg_id in self.delivered:
                raise ProtocolViolation(f"{msg_id} would be CAB-delivered twice")
            self.delivered.add(msg_id)
            self.trace.add(self.kernel.now, self.i, "cab-deliver", id=msg_id)
            out.append(msg_id)
            if self.on_cab_deliver is not None:
                self.on_cab_deliver(msg_id)
        return out

    # -- consensus: coordinator -----------------------------------------------------

    def maybe_propose(self) -> None:
        if not (self.is_leader and self.phase1_ok) or self.inflight:
            return
        ready = [
            m for m, name in self.pending.items()
            if m not in self.decided_ids and self.predicates[name](m)
        ]
        if not ready:
            return
        ready.sort(key=lambda m: self.sort_keys[self.cab_meta[m]](m))
        k = self.next_k
        self.next_k += 1
        self.inflight.add(k)
        self._send_paxos_all(P2A, (k, self.ballot, tuple(ready)))

    def _send_paxos_all(self, channel: str, body) -> None:
        self._on_paxos(channel, self.i, body)
        self.net.broadcast(self.i, channel, body, _paxos_size(channel, body))

    def _start_election(self) -> None:
        self.round = max(self.round, self.promised[0]) + 1
        self.ballot = (self.round, self.i)
        self.is_leader = True
        self.phase1_ok = False
        self.inflight.clear()
        self._p1b = {}
        self.trace.add(self.kernel.now, self.i, "election", ballot=self.ballot)
        self._send_paxos_all(P1A, (self.ballot, self.next_enqueue))

    def _on_hb_timer(self) -> None:
        now = self.kernel.now
        if self.is_leader and self.phase1_ok:
            self.net.broadcast(self.i, HB, (self.ballot,), 16)
            self.last_hb = now
            self.maybe_propose()
        elif now - self.last_hb > self.leader_timeout_ms:
            self.believed_leader = self.believed_leader % self.n + 1
            self.last_hb = now
            if self.believed_leader == self.i:
                self._start_election()
        if self.timers_enabled():
            self.kernel.schedule(self.hb_ms, self.i, TIMER, ("hb",))

    # -- consensus: message handlers ---------------------------------------------------

    def _on_paxos(self, channel: str, src: int, body) -> None:
        if channel == P1A:
            ballot, from_k = body
            if ballot >= self.promised:
                self.promised = ballot
                if ballot[1] != self.i:
                    self._demote(ballot, src)
                acc = {k: bv for k, bv in self.accepted.items() if k >= from_k}
                dec = {k: v for k, v in self.decisions.items() if k >= from_k}
                reply = (ballot, acc, dec, self.max_k)
                if src == self.i:
                    self._on_paxos(P1B, self.i, reply)
                else:
                    self.net.send(self.i, src, P1B, reply, _paxos_size(P1B, reply))
            elif src != self.i:
                self.net.send(self.i, src, NACK, (ballot, self.promised), 16)
        elif channel == P1B:
            ballot, acc, dec, mk = body
            if ballot != self.ballot or self.phase1_ok or not self.is_leader:
                return
            self._p1b[src] = (acc, dec, mk)
            if len(self._p1b) >= self.majority:
                self._complete_election()
        elif channel == P2A:
            k, ballot, v = body
            self.believed_leader = ballot[1]
            self.last_hb = self.kernel.now
            if ballot >= self.promised:
                self.promised = ballot
                if ballot[1] != self.i:
                    self._demote(ballot, src)
                self.accepted[k] = (ballot, v)
                self.max_k = max(self.max_k, k)
                if self.on_opt_batch is not None:
                    self.on_opt_batch(k, v)
                self._send_paxos_all(P2B, (k, ballot, v))
            elif src != self.i:
                self.net.send(self.i, src, NACK, (ballot, self.promised), 16)
        elif channel == P2B:
            k, ballot, v = body
            votes = self._p2b.setdefault((k, ballot), set())
            votes.add(src)
            if len(votes) >= self.majority:
                self._decide(k, v)
        elif channel == DECIDE:
            k, v = body
            self._decide(k, v)
        elif channel == NACK:
            _, promised = body
            if promised > self.promised:
                self.promised = promised
            if self.is_leader and promised > self.ballot:
                self._demote(promised, promised[1])
        elif channel == HB:
            ballot, = body
            if ballot >= self.promised:
                self.believed_leader = src
                self.last_hb = self.kernel.now

    def _demote(self, ballot, leader: int) -> None:
        if self.is_leader and ballot[1] != self.i:
            self.is_leader = False
            self.phase1_ok = False
            self.inflight.clear()
        self.believed_leader = ballot[1]
        self.last_hb = self.kernel.now

    def _complete_election(self) -> None:
        self.phase1_ok = True
        constrained: dict[int, tuple] = {}
        top = self.max_k
        for acc, dec, mk in self._p1b.values():
            top = max(top, mk)
            for k, v in dec.items():
                self._decide(k, v)
            for k, (b, v) in acc.items():
                cur = constrained.get(k)
                if cur is None or b > cur[0]:
                    constrained[k] = (b, v)
        for k in range(self.next_enqueue, top + 1):
            if k in self.decisions:
                continue
            bv = constrained.get(k)
            v = bv[1] if bv is not None else ()
            self.inflight.add(k)
            self._send_paxos_all(P2A, (k, self.ballot, v))
        self.next_k = top + 1
        self.maybe_propose()

    def _decide(self, k: int, v: tuple) -> None:
        prev = self.decisions.get(k)
        if prev is not None:
            if prev != v:
                raise ProtocolViolation(f"conflicting decisions for instance {k}")
            return
        self.decisions[k] = v
        self.max_k = max(self.max_k, k)
        self.inflight.discard(k)
        self.trace.add(self.kernel.now, self.i, "decide", k=k, ids=v)
        while self.next_enqueue in self.decisions:
            for msg_id in self.decisions[self.next_enqueue]:
                self.decided_ids.add(msg_id)
                self.pending.pop(msg_id, None)
                if msg_id not in self.enqueued:
                    self.enqueued.add(msg_id)
                    self.queue.append(msg_id)
            self.next_enqueue += 1
        self.try_deliver()
        self.maybe_propose()

    # -- event entry points ------------------------------------------------------------

    def handle_message(self, channel: str, src: int, body) -> None:
        if channel in (GOSSIP, CAB_CTL):
            self._on_gossip(body)
        elif channel == ANTI_ENTROPY:
            if body[0] == "frontier":
                self._on_frontier(src, body)
            else:
                self._on_gossip(body)
        elif channel in _PAXOS_CHANNELS:
            self._on_paxos(channel, src, body)
        else:
            raise ProtocolViolation(f"unknown channel {channel!r}")

    def handle_timer(self, name: str) -> None:
        if name == "ae":
            self._on_ae_timer()
        elif name == "hb":
            self._on_hb_timer()

    # -- quiescence support ---------------------------------------------------------------

    def undelivered_ids(self) -> set:
        return set(self.cab_meta) - self.delivered


def _payload_size(payload) -> int:
    if payload[0] == "cab":
        return 16
    if payload[0] == "request":
        req = payload[1]
        ctx = getattr(req, "ctx", None)
        return 64 + (12 * ctx.compressed_size() if ctx is not None else 0)
    return 24


def _paxos_size(channel: str, body) -> int:
    if channel in (P2A, P2B):
        return 24 + 8 * len(body[2])
    if channel == P1B:
        _, acc, dec, _ = body
        return 24 + sum(8 * len(v) + 12 for _, v in acc.values()) + \
            sum(8 * len(v) + 12 for v in dec.values())
    return 24
