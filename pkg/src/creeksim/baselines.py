"""Comparison systems on the same kernel, broadcast substrate, workload and
engines: sequential SMR, Bayou (primary-assigned commit order), and an
Archie-style speculative SMR with optimistic delivery."""

from __future__ import annotations

import bisect

from .broadcast import BroadcastNode
from .engine import MultiVersionEngine, ReferenceEngine
from .replica import HAVE_REQ, MvExec, RefExec, Request
from .sim import EXEC_DONE, ROLLBACK_DONE, TIMER, Clocks, Kernel, ProtocolViolation, Trace
from .workload import NOOP


class _BaseReplica:
    """State shared by the baseline replicas (duck-typed for the exec managers)."""

    def __init__(self, i: int, kernel: Kernel, clocks: Clocks, bcast: BroadcastNode,
                 trace: Trace):
        self.i = i
        self.kernel = kernel
        self.clocks = clocks
        self.bcast = bcast
        self.trace = trace
        self.committed: list[Request] = []
        self.tentative: list[Request] = []
        self.order: list[Request] = []
        self.pos: dict = {}
        self.requests: dict = {}
        self.curr_event_no = 0
        self.awaiting: dict = {}
        self._svc_table: dict = {}
        self._svc_default = 0.5
        self.read_only_shortcut = False

    def set_service_times(self, table: dict, default: float) -> None:
        self._svc_table = table
        self._svc_default = default

    def _svc_for(self, prog) -> float:
        if prog[0] == NOOP:
            return 0.01
        return self._svc_table.get(prog[0], self._svc_default)

    def _new_request(self, prog, strong: bool) -> Request:
        self.curr_event_no += 1
        rid = (self.i, self.curr_event_no)
        req = Request(self.clocks.now(self.i), rid, prog, strong, None, self._svc_for(prog))
        self.requests[rid] = req
        self.trace.add(self.kernel.now, self.i, "invoke", id=rid, type=prog[0],
                       strong=int(strong), ro=0)
        return req

    def _respond(self, req: Request, kind: str, value) -> None:
        self.trace.add(self.kernel.now, self.i, "response", id=req.rid, kind=kind,
                       value=value, strong=int(req.strong))

    def _rebuild_order(self, from_idx: int) -> None:
        self.order = self.committed + self.tentative
        for idx in range(from_idx, len(self.order)):
            self.pos[self.order[idx].rid] = idx

    def _record_readonly(self, req: Request, resp) -> None:
        self._respond(req, "tentative", resp)

    def _drain_stable(self) -> None:
        pass

    def handle_event(self, kind: str, payload) -> None:
        if kind == EXEC_DONE:
            self.exec_mgr.on_exec_done(payload)
        elif kind == ROLLBACK_DONE:
            self.exec_mgr.on_rollback_done(payload)

    def start_timers(self) -> None:
        pass

    def committed_ids(self) -> list:
        return [r.rid for r in self.committed]

    def tentative_ids(self) -> list:
        return [r.rid for r in self.tentative]

    def quiescent(self) -> bool:
        return self.exec_mgr.quiescent()

    def dump(self) -> dict:
        return self.exec_mgr.dump()


class SmrReplica(_BaseReplica):
    """Executes all transactions sequentially in total-order delivery order."""

    def __init__(self, i, kernel, clocks, bcast, trace, store: dict,
                 rollback_ms: float = 0.02, **_):
        super().__init__(i, kernel, clocks, bcast, trace)
        self.exec_mgr = RefExec(self, ReferenceEngine(store), rollback_ms)
        bcast.register_predicate(HAVE_REQ, self._have, self._sort_key)
        bcast.register_rb_handler("request", self._on_rb_request)
        bcast.on_cab_deliver = self.on_cab_deliver

    def invoke(self, prog, strong: bool) -> tuple:
        req = self._new_request(prog, strong)
        self.bcast.cab_cast(req.rid, HAVE_REQ)
        self.bcast.rb_cast(("request", req), 64)
        self.awaiting[req.rid] = None
        self.bcast.try_deliver()
        self.bcast.maybe_propose()
        return req.rid

    def _have(self, rid) -> bool:
        return rid in self.requests

    def _sort_key(self, rid):
        req = self.requests.get(rid)
        return (req.ts, rid) if req is not None else (float("inf"), rid)

    def _on_rb_request(self, payload) -> None:
        req: Request = payload[1]
        self.requests.setdefault(req.rid, req)

    def on_cab_deliver(self, rid) -> None:
        req = self.requests[rid]
        self.committed.append(req)
        self._rebuild_order(len(self.committed) - 1)
        self.trace.add(self.kernel.now, self.i, "commit", id=rid, pos=len(self.committed) - 1)
        self.exec_mgr.on_inserted(len(self.committed) - 1)

    def _record_exec(self, req: Request, resp) -> None:
        if req.rid in self.awaiting:
            self._respond(req, "stable", resp)
            del self.awaiting[req.rid]


class BayouReplica(_BaseReplica):
    """Speculative timestamp order with a primary assigning commit sequence
    numbers in its own delivery order; single execution slot."""

    PRIMARY = 1

    def __init__(self, i, kernel, clocks, bcast, trace, store: dict,
                 rollback_ms: float = 0.02, **_):
        super().__init__(i, kernel, clocks, bcast, trace)
        self.exec_mgr = RefExec(self, ReferenceEngine(store), rollback_ms)
        self.csn_of: dict = {}        # rid -> csn
        self.by_csn: dict = {}        # csn -> rid
        self.next_csn = 1             # primary's counter
        self.next_commit = 1          # next csn to move to committed
        bcast.register_rb_handler("request", self._on_rb_request)
        bcast.register_rb_handler("csn", self._on_csn)

    def invoke(self, prog, strong: bool) -> tuple:
        req = self._new_request(prog, strong)
        self.awaiting[req.rid] = None
        self.bcast.rb_cast(("request", req), 64)
        self._insert(req)
        if self.i == self.PRIMARY:
            self._assign_csn(req.rid)
        return req.rid

    def _insert(self, req: Request) -> None:
        keys = [x.key for x in self.tentative]
        at = bisect.bisect_left(keys, req.key)
        self.tentative.insert(at, req)
        self._rebuild_order(len(self.committed) + at)
        self.exec_mgr.on_new_request(req)
        self.exec_mgr.on_inserted(len(self.committed) + at)
        self._advance_commits()

    def _assign_csn(self, rid) -> None:
        n = self.next_csn
        self.next_csn += 1
        self.bcast.rb_cast(("csn", rid, n), 24)

    def _on_rb_request(self, payload) -> None:
        req: Request = payload[1]
        if req.rid[0] == self.i:
            return
        if req.rid in self.requests:
            return
        self.requests[req.rid] = req
        self._insert(req)
        if self.i == self.PRIMARY:
            self._assign_csn(req.rid)

    def _on_csn(self, payload) -> None:
        _, rid, n = payload
        self.csn_of[rid] = n
        self.by_csn[n] = rid
        self._advance_commits()

    def _advance_commits(self) -> None:
        moved = False
        while True:
            rid = self.by_csn.get(self.next_commit)
            if rid is None or rid not in self.requests:
                break
            req = self.requests[rid]
            if self.pos.get(rid, -1) < len(self.committed):
                break  # not yet in tentative (still in flight elsewhere)
            self.tentative.remove(req)
            old_order = self.order
            base = len(self.committed)
            self.committed.append(req)
            new_order = self.committed + self.tentative
            from_idx = base
            limit = min(len(old_order), len(new_order))
            while from_idx < limit and old_order[from_idx] is new_order[from_idx]:
                from_idx += 1
            self._rebuild_order(from_idx)
            self.trace.add(self.kernel.now, self.i, "commit", id=rid, pos=base)
            self.exec_mgr.on_moved([rid], from_idx)
            self.next_commit += 1
            moved = True
        if moved:
            self.exec_mgr.pump()

    def _record_exec(self, req: Request, resp) -> None:
        if req.rid in self.awaiting:
            self._respond(req, "tentative", resp)
            del self.awaiting[req.rid]


class ArchieReplica(_BaseReplica):
    """Speculative SMR: execution starts at optimistic delivery (coordinator
    emission order); responses are withheld until final delivery confirms the
    executed prefix."""

    def __init__(self, i, kernel, clocks, bcast, trace, store: dict,
                 slots: int = 16, **_):
        super().__init__(i, kernel, clocks, bcast, trace)
        self.exec_mgr = MvExec(self, MultiVersionEngine(store), slots, ordered_install=True)
        self.opt_queue: list = []     # ids awaiting request arrival, in emission order
        self.opt_seen: set = set()
        self.predicted: set = set()
        self._stable_ptr = 0
        bcast.register_predicate(HAVE_REQ, self._have, self._sort_key)
        bcast.register_rb_handler("request", self._on_rb_request)
        bcast.on_cab_deliver = self.on_cab_deliver
        bcast.on_opt_batch = self.on_opt_batch

    def invoke(self, prog, strong: bool) -> tuple:
        req = self._new_request(prog, strong)
        self.bcast.cab_cast(req.rid, HAVE_REQ)
        self.bcast.rb_cast(("request", req), 64)
        self.awaiting[req.rid] = None
        self.bcast.try_deliver()
        self.bcast.maybe_propose()
        return req.rid

    def _have(self, rid) -> bool:
        return rid in self.requests

    def _sort_key(self, rid):
        req = self.requests.get(rid)
        return (req.ts, rid) if req is not None else (float("inf"), rid)

    def _on_rb_request(self, payload) -> None:
        req: Request = payload[1]
        self.requests.setdefault(req.rid, req)
        self._drain_opt()

    def on_opt_batch(self, k: int, ids: tuple) -> None:
        for rid in ids:
            if rid not in self.opt_seen:
                self.opt_seen.add(rid)
                self.opt_queue.append(rid)
        self._drain_opt()

    def _drain_opt(self) -> None:
        while self.opt_queue and self.opt_queue[0] in self.requests:
            rid = self.opt_queue.pop(0)
            if rid in self.pos:
                continue
            req = self.requests[rid]
            self.tentative.append(req)
            at = len(self.order)
            self._rebuild_order(at)
            self.trace.add(self.kernel.now, self.i, "opt-deliver", id=rid)
            self.exec_mgr.on_new_request(req)
            self.exec_mgr.on_inserted(at)

    def on_cab_deliver(self, rid) -> None:
        req = self.requests[rid]
        fresh = rid not in self.pos
        old_order = self.order
        base = len(self.committed)
        if req in self.tentative:
            self.tentative.remove(req)
        self.committed.append(req)
        new_order = self.committed + self.tentative
        from_idx = base
        limit = min(len(old_order), len(new_order))
        while from_idx < limit and old_order[from_idx] is new_order[from_idx]:
            from_idx += 1
        self._rebuild_order(from_idx)
        self.trace.add(self.kernel.now, self.i, "commit", id=rid, pos=base)
        if fresh:
            self.exec_mgr.on_new_request(req)
        self.exec_mgr.on_moved([rid], from_idx)
        self._drain_stable()

    def _record_exec(self, req: Request, resp) -> None:
        rid = req.rid
        if rid in self.awaiting:
            self.awaiting[rid] = resp
            if rid not in self.predicted:
                self.predicted.add(rid)
                self.trace.add(self.kernel.now, self.i, "predicted-tentative",
                               id=rid, value=resp)

    def _drain_stable(self) -> None:
        while self._stable_ptr < len(self.committed):
            req = self.committed[self._stable_ptr]
            if not self.exec_mgr.stable_ready(req):
                break
            rid = req.rid
            if rid in self.awaiting:
                self._respond(req, "stable", self.exec_mgr.engine.response_of(rid))
                del self.awaiting[rid]
            self._stable_ptr += 1
