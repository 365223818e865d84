"""The mixed-consistency replica state machine: invocation, gossip handling,
total-order delivery handling, tentative-order maintenance, execution and
rollback scheduling, commit, and client response emission."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Optional

from .broadcast import BroadcastNode
from .dvv import DotSet
from .engine import MultiVersionEngine, ReferenceEngine
from .sim import EXEC_DONE, ROLLBACK_DONE, TIMER, Clocks, Kernel, ProtocolViolation, Trace
from .workload import NOOP, is_read_only, run_program

CHECK_DEP = "checkDep"
HAVE_REQ = "haveReq"


@dataclass
class Request:
    """Replicated operation envelope, ordered by (timestamp, id)."""

    ts: float
    rid: tuple  # (replica, event_no)
    prog: tuple
    strong: bool
    ctx: Optional[DotSet]  # causal context; set at creation for strong ops
    svc: float  # simulated service time, ms

    @property
    def key(self):
        return (self.ts, self.rid)

    def __lt__(self, other: "Request") -> bool:
        return self.key < other.key

    def __repr__(self):
        kind = "strong" if self.strong else "weak"
        return f"Req({self.rid}, ts={self.ts:.3f}, {kind}, {self.prog[0]})"


def plan_adjustment(executed: list, new_order: list):
    """The execution-adjustment rule: keep the longest common prefix, roll the
    rest back in reverse execution order, re-run everything else."""
    lcp = 0
    limit = min(len(executed), len(new_order))
    while lcp < limit and executed[lcp] is new_order[lcp]:
        lcp += 1
    out_of_order = executed[lcp:]
    return executed[:lcp], list(reversed(out_of_order)), list(new_order[lcp:])


class RefExec:
    """Single execution slot over the undo-log engine; rollbacks strictly
    precede executions."""

    def __init__(self, replica: "CreekReplica", engine: ReferenceEngine, rollback_ms: float):
        self.replica = replica
        self.engine = engine
        self.rollback_ms = rollback_ms
        self.executed: list[Request] = []
        self.executed_set: set = set()
        self.to_rollback: list[Request] = []
        self.inflight = None
        self.ro_queue: list[Request] = []
        self.exec_count = 0
        self.rollback_count = 0
        self.busy_ms = 0.0

    @property
    def slots(self) -> int:
        return 1

    def on_new_request(self, req: Request) -> None:
        pass  # pump derives work from the order directly

    def on_inserted(self, from_idx: int) -> None:
        self._replan()

    def on_moved(self, moved, from_idx: int) -> None:
        self._replan()

    def _replan(self) -> None:
        in_order, rollback_add, _ = plan_adjustment(self.executed, self.replica.order)
        if rollback_add:
            self.executed = in_order
            self.executed_set = {r.rid for r in in_order}
            self.to_rollback.extend(rollback_add)
        self.pump()

    def submit_readonly(self, req: Request) -> None:
        self.ro_queue.append(req)
        self.pump()

    def pump(self) -> None:
        if self.inflight is not None:
            return
        r = self.replica
        if self.to_rollback:
            req = self.to_rollback[0]
            self.inflight = ("rb", req)
            r.kernel.schedule(self.rollback_ms, r.i, ROLLBACK_DONE, req)
        elif len(self.executed) < len(r.order):
            req = r.order[len(self.executed)]
            self.inflight = ("exec", req, len(self.executed))
            r.kernel.schedule(req.svc, r.i, EXEC_DONE, req)
        elif self.ro_queue:
            req = self.ro_queue[0]
            self.inflight = ("ro", req)
            r.kernel.schedule(req.svc, r.i, EXEC_DONE, req)

    def on_exec_done(self, req: Request) -> None:
        kind = self.inflight[0]
        r = self.replica
        self.exec_count += 1
        self.busy_ms += req.svc
        if kind == "ro":
            self.inflight = None
            self.ro_queue.pop(0)
            resp = run_program(req.prog, self.engine.db.get, _no_write)
            r.trace.add(r.kernel.now, r.i, "exec", id=req.rid, ok=1, ro=1)
            r._record_readonly(req, resp)
        else:
            _, _, cap_len = self.inflight
            self.inflight = None
            stale = (
                bool(self.to_rollback)
                or len(self.executed) != cap_len
                or cap_len >= len(r.order)
                or r.order[cap_len] is not req
            )
            r.trace.add(r.kernel.now, r.i, "exec", id=req.rid, ok=int(not stale))
            if not stale:
                resp = self.engine.execute(req.rid, req.prog)
                self.executed.append(req)
                self.executed_set.add(req.rid)
                if r.pos[req.rid] < len(r.committed):
                    self.engine.discard_undo(req.rid)
                r._record_exec(req, resp)
                r._drain_stable()
        self.pump()

    def on_rollback_done(self, req: Request) -> None:
        r = self.replica
        if not self.to_rollback or self.to_rollback[0] is not req:
            raise ProtocolViolation("rollback completion out of order")
        self.to_rollback.pop(0)
        self.inflight = None
        self.rollback_count += 1
        self.engine.rollback(req.rid)
        r.trace.add(r.kernel.now, r.i, "rollback", id=req.rid)
        self.pump()

    def stable_ready(self, req: Request) -> bool:
        return req.rid in self.executed_set

    def on_stable_final(self, req: Request) -> None:
        self.engine.discard_undo(req.rid)

    def after_commit(self) -> None:
        pass

    def quiescent(self) -> bool:
        return (
            self.inflight is None
            and not self.to_rollback
            and len(self.executed) >= len(self.replica.order)
            and not self.ro_queue
        )

    def dump(self) -> dict:
        return self.engine.dump()


class MvExec:
    """Multiversioned execution with a bounded slot pool; conflict-aware
    rollback avoidance, install-time checks and invalidation cascades."""

    def __init__(self, replica: "CreekReplica", engine: MultiVersionEngine,
                 slots: int, gc_backlog: int = 64, gc_every: int = 8,
                 ordered_install: bool = False):
        self.replica = replica
        self.engine = engine
        self.slots = slots
        self.gc_backlog = gc_backlog
        self.gc_every = gc_every
        self.ordered_install = ordered_install
        self.inflight: dict = {}   # rid -> req
        self.parked: list = []     # completions awaiting in-order install
        self.needs_exec: set = set()
        self.ro_queue: list[Request] = []
        self._prefix_ok = 0
        self._invalidated_backlog = 0
        self._commits_since_gc = 0
        self.exec_count = 0
        self.rollback_count = 0
        self.busy_ms = 0.0
        self.gc_reclaimed = 0

    def prefix_valid_len(self) -> int:
        order = self.replica.order
        if self._prefix_ok > len(order):
            self._prefix_ok = len(order)
        while self._prefix_ok < len(order) and self.engine.is_installed(order[self._prefix_ok].rid):
            self._prefix_ok += 1
        return self._prefix_ok

    def on_new_request(self, req: Request) -> None:
        self.needs_exec.add(req.rid)

    def on_inserted(self, from_idx: int) -> None:
        # an insertion shifts later positions but changes no relative order;
        # nothing installed can resolve differently until the new op installs
        self._prefix_ok = min(self._prefix_ok, from_idx)
        self.pump()

    def on_moved(self, moved, from_idx: int) -> None:
        self._prefix_ok = min(self._prefix_ok, from_idx)
        invalid = self.engine.revalidate_moved(moved, self.replica.pos)
        self._note_invalidated(invalid)
        self.pump()

    def _note_invalidated(self, invalid: list) -> None:
        r = self.replica
        for rid in invalid:
            self.rollback_count += 1
            self._invalidated_backlog += 1
            self.needs_exec.add(rid)
            idx = r.pos.get(rid)
            if idx is not None and idx < self._prefix_ok:
                self._prefix_ok = idx
            r.trace.add(r.kernel.now, r.i, "invalidate", id=rid)
        if self._invalidated_backlog > self.gc_backlog:
            self._gc()

    def _gc(self) -> None:
        r = self.replica
        floor = min(self.prefix_valid_len(), len(r.committed))
        self.gc_reclaimed += self.engine.gc(r.pos, len(r.committed), floor)
        self._invalidated_backlog = 0

    def submit_readonly(self, req: Request) -> None:
        self.ro_queue.append(req)
        self.pump()

    def _start(self, req: Request, idx: int) -> None:
        r = self.replica
        snap = self.engine.open_snapshot(req.rid, dict(r.pos), idx)
        result = self.engine.execute_on(snap, req.prog)
        self.inflight[req.rid] = req
        r.kernel.schedule(req.svc, r.i, EXEC_DONE, (req, snap, result))

    def pump(self) -> None:
        r = self.replica
        if self.needs_exec and len(self.inflight) < self.slots:
            pos = r.pos
            runnable = sorted(
                ((pos[rid], rid) for rid in self.needs_exec
                 if rid in pos and rid not in self.inflight
                 and not self.engine.is_installed(rid)),
            )
            for idx, rid in runnable:
                if len(self.inflight) >= self.slots:
                    break
                self.needs_exec.discard(rid)
                self._start(r.requests[rid], idx)
        while len(self.inflight) < self.slots and self.ro_queue:
            req = self.ro_queue.pop(0)
            self._start(req, len(r.order))

    def on_exec_done(self, payload) -> None:
        req, snap, result = payload
        r = self.replica
        self.inflight.pop(req.rid, None)
        self.exec_count += 1
        self.busy_ms += req.svc
        if req.rid not in r.pos:
            # read-only shortcut op: respond from the snapshot, install nothing
            self.engine.close_snapshot(snap)
            r.trace.add(r.kernel.now, r.i, "exec", id=req.rid, ok=1, ro=1)
            r._record_readonly(req, result[0])
            self.pump()
            return
        if self.ordered_install and r.pos[req.rid] > self.prefix_valid_len():
            self.parked.append((req, snap, result))
            self.pump()
            return
        self._install(req, snap, result)
        self._unpark()
        self.pump()

    def _install(self, req: Request, snap, result) -> bool:
        r = self.replica
        ok, invalidated = self.engine.try_install(snap, result, r.pos)
        r.trace.add(r.kernel.now, r.i, "exec", id=req.rid, ok=int(ok))
        if ok:
            self._note_invalidated(invalidated)
            r._record_exec(req, result[0])
            r._drain_stable()
        else:
            self.needs_exec.add(req.rid)  # stale snapshot: reexecute
        return ok

    def _unpark(self) -> None:
        progressed = True
        while progressed and self.parked:
            progressed = False
            r = self.replica
            frontier = self.prefix_valid_len()
            for item in list(self.parked):
                req, snap, result = item
                idx = r.pos.get(req.rid)
                if idx is not None and idx > frontier:
                    continue
                self.parked.remove(item)
                if idx is None:
                    self.engine.close_snapshot(snap)
                elif self._install(req, snap, result):
                    progressed = True
                    frontier = self.prefix_valid_len()

    def stable_ready(self, req: Request) -> bool:
        return self.replica.pos[req.rid] < self.prefix_valid_len()

    def on_stable_final(self, req: Request) -> None:
        pass

    def after_commit(self) -> None:
        self._commits_since_gc += 1
        if self._commits_since_gc >= self.gc_every:
            self._commits_since_gc = 0
            self._gc()

    def quiescent(self) -> bool:
        return (
            not self.inflight
            and not self.parked
            and not self.ro_queue
            and self.prefix_valid_len() >= len(self.replica.order)
        )

    def dump(self) -> dict:
        return self.engine.dump(self.replica.pos)


def _no_write(oid, value):  # read-only programs must not write
    raise ProtocolViolation(f"read-only program attempted write to {oid}")


class CreekReplica:
    def __init__(self, i: int, kernel: Kernel, clocks: Clocks, bcast: BroadcastNode,
                 trace: Trace, store: dict, engine: str = "multiversion",
                 slots: int = 16, rollback_ms: float = 0.02,
                 read_only_shortcut: bool = True, noop_flush_ms: float = 0.0):
        self.i = i
        self.kernel = kernel
        self.clocks = clocks
        self.bcast = bcast
        self.trace = trace
        self.read_only_shortcut = read_only_shortcut
        self.noop_flush_ms = noop_flush_ms

        self.committed: list[Request] = []
        self.tentative: list[Request] = []
        self.order: list[Request] = []
        self.pos: dict = {}
        self.causal_ctx = DotSet()
        self.requests: dict = {}
        self.curr_event_no = 0
        self.awaiting: dict = {}      # rid -> last recorded response
        self.last_emitted: dict = {}
        self._stable_ptr = 0
        self._flush_rid = None
        self._svc_table: dict = {}
        self._svc_default = 0.5

        if engine == "multiversion":
            self.exec_mgr = MvExec(self, MultiVersionEngine(store), slots)
        elif engine == "reference":
            self.exec_mgr = RefExec(self, ReferenceEngine(store), rollback_ms)
        else:
            raise ValueError(f"unknown engine {engine!r}")

        bcast.register_predicate(CHECK_DEP, self.check_dep, self._cab_sort_key)
        bcast.register_rb_handler("request", self._on_rb_request)
        bcast.on_cab_deliver = self.on_cab_deliver

    # -- invocation --------------------------------------------------------------

    def invoke(self, prog: tuple, strong: bool) -> tuple:
        self.curr_event_no += 1
        rid = (self.i, self.curr_event_no)
        ts = self.clocks.now(self.i)
        svc = self._svc_for(prog)
        ro = is_read_only(prog)
        self.trace.add(self.kernel.now, self.i, "invoke", id=rid, type=prog[0],
                       strong=int(strong), ro=int(ro))
        if ro and not strong and self.read_only_shortcut:
            req = Request(ts, rid, prog, False, None, svc)
            self.exec_mgr.submit_readonly(req)
            return rid
        req = Request(ts, rid, prog, strong, None, svc)
        self.requests[rid] = req
        if strong:
            req.ctx = self.causal_ctx.difference(
                x.rid for x in self.tentative if req < x
            )
            self.bcast.cab_cast(rid, CHECK_DEP)
        else:
            self.causal_ctx.add(rid)
        self.bcast.rb_cast(("request", req),
                           64 + (12 * req.ctx.compressed_size() if req.ctx else 0))
        self.adjust_tentative_order(req)
        self.awaiting[rid] = None
        # tentative insertion may have changed predicate truth
        self.bcast.try_deliver()
        self.bcast.maybe_propose()
        return rid

    def _svc_for(self, prog) -> float:
        if prog[0] == NOOP:
            return 0.01
        return self._svc_table.get(prog[0], self._svc_default)

    def set_service_times(self, table: dict, default: float) -> None:
        self._svc_table = table
        self._svc_default = default

    # -- predicate ----------------------------------------------------------------

    def check_dep(self, rid) -> bool:
        req = self.requests.get(rid)
        if req is None or rid not in self.pos:
            return False
        return req.ctx.issubset(self.causal_ctx)

    def _cab_sort_key(self, rid):
        req = self.requests.get(rid)
        return (req.ts, rid) if req is not None else (float("inf"), rid)

    # -- broadcast handlers ----------------------------------------------------------

    def _on_rb_request(self, payload) -> None:
        req: Request = payload[1]
        if req.rid[0] == self.i:
            return  # issued locally; handled inline at invocation
        if req.rid in self.pos:
            return
        self.requests[req.rid] = req
        if not req.strong:
            self.causal_ctx.add(req.rid)
        self.adjust_tentative_order(req)

    def on_cab_deliver(self, rid) -> None:
        req = self.requests.get(rid)
        if req is None or self.pos.get(rid, -1) < len(self.committed):
            raise ProtocolViolation(f"CAB-delivered {rid} without a tentative Request")
        self.causal_ctx.add(rid)
        self.commit(req)

    # -- ordering ---------------------------------------------------------------------

    def adjust_tentative_order(self, req: Request) -> None:
        keys = [x.key for x in self.tentative]
        at = bisect.bisect_left(keys, req.key)
        self.tentative.insert(at, req)
        self._rebuild_order(len(self.committed) + at)
        self.exec_mgr.on_new_request(req)
        self.exec_mgr.on_inserted(len(self.committed) + at)

    def _rebuild_order(self, from_idx: int) -> None:
        self.order = self.committed + self.tentative
        for idx in range(from_idx, len(self.order)):
            self.pos[self.order[idx].rid] = idx

    def commit(self, req: Request) -> None:
        ctx = req.ctx
        committed_ext = [x for x in self.tentative if x.rid in ctx]
        new_tentative = [x for x in self.tentative if x.rid not in ctx and x is not req]
        old_order = self.order
        base = len(self.committed)
        self.committed = self.committed + committed_ext + [req]
        self.tentative = new_tentative
        # first index whose occupant changed
        from_idx = base
        new_order = self.committed + self.tentative
        limit = min(len(old_order), len(new_order))
        while from_idx < limit and old_order[from_idx] is new_order[from_idx]:
            from_idx += 1
        self._rebuild_order(from_idx)
        now = self.kernel.now
        for x in committed_ext + [req]:
            self.trace.add(now, self.i, "commit", id=x.rid, pos=self.pos[x.rid])
        if req.rid == self._flush_rid:
            self._flush_rid = None
        self.exec_mgr.on_moved([x.rid for x in committed_ext + [req]], from_idx)
        self.exec_mgr.after_commit()
        self._drain_stable()

    # -- responses -----------------------------------------------------------------------

    def _respond(self, req: Request, kind: str, value) -> None:
        self.trace.add(self.kernel.now, self.i, "response", id=req.rid, kind=kind,
                       value=value, strong=int(req.strong))

    def _record_readonly(self, req: Request, resp) -> None:
        self._respond(req, "tentative", resp)

    def _record_exec(self, req: Request, resp) -> None:
        rid = req.rid
        if rid not in self.awaiting:
            return
        if not req.strong:
            self._respond(req, "tentative", resp)
            del self.awaiting[rid]
            return
        self.awaiting[rid] = resp
        if self.pos[rid] >= len(self.committed):  # still tentative
            if self.last_emitted.get(rid, _UNSET) != resp:
                self._respond(req, "tentative", resp)
                self.last_emitted[rid] = resp

    def _drain_stable(self) -> None:
        while self._stable_ptr < len(self.committed):
            req = self.committed[self._stable_ptr]
            if not self.exec_mgr.stable_ready(req):
                break
            rid = req.rid
            if req.strong and rid in self.awaiting:
                self._respond(req, "stable", self.awaiting[rid])
                del self.awaiting[rid]
                self.last_emitted.pop(rid, None)
            self.exec_mgr.on_stable_final(req)
            self._stable_ptr += 1

    # -- event routing ------------------------------------------------------------------

    def handle_event(self, kind: str, payload) -> None:
        if kind == EXEC_DONE:
            self.exec_mgr.on_exec_done(payload)
        elif kind == ROLLBACK_DONE:
            self.exec_mgr.on_rollback_done(payload)
        elif kind == TIMER and payload[0] == "flush":
            self._on_flush_timer()

    def _on_flush_timer(self) -> None:
        if self.tentative and self._flush_rid is None:
            self._flush_rid = self.invoke((NOOP, ()), True)
        if self.noop_flush_ms > 0 and self.bcast.timers_enabled():
            self.kernel.schedule(self.noop_flush_ms, self.i, TIMER, ("flush",))

    def start_timers(self) -> None:
        if self.noop_flush_ms > 0:
            self.kernel.schedule(self.noop_flush_ms * (1 + self.i / 10), self.i,
                                 TIMER, ("flush",))

    # -- quiescence / inspection -------------------------------------------------------

    def quiescent(self) -> bool:
        return self.exec_mgr.quiescent()

    def committed_ids(self) -> list:
        return [r.rid for r in self.committed]

    def tentative_ids(self) -> list:
        return [r.rid for r in self.tentative]

    def dump(self) -> dict:
        return self.exec_mgr.dump()


class _Unset:
    def __eq__(self, other):
        return False


_UNSET = _Unset()
