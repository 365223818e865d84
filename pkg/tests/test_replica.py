import pytest

from creeksim.dvv import DotSet
from creeksim.replica import CreekReplica, Request, plan_adjustment
from creeksim.sim import Clocks, Kernel, ProtocolViolation, Trace
from creeksim.workload import SCRIPT, oracle_execute


class StubBcast:
    """Records casts; the replica under test is driven by direct calls."""

    def __init__(self):
        self.rb_casts = []
        self.cab_casts = []
        self.predicates = {}
        self.on_cab_deliver = None
        self.timers_enabled = lambda: False

    def register_predicate(self, name, fn, key):
        self.predicates[name] = fn

    def register_rb_handler(self, tag, fn):
        pass

    def rb_cast(self, payload, size, channel=None):
        self.rb_casts.append(payload)

    def cab_cast(self, msg_id, name):
        self.cab_casts.append(msg_id)

    def try_deliver(self):
        pass

    def maybe_propose(self):
        pass


def script(*steps):
    return (SCRIPT, tuple(steps))


def make_replica(engine="reference", store=None, shortcut=False, slots=16):
    kernel = Kernel(seed=0)
    clocks = Clocks(kernel, 1, 0.0)
    bcast = StubBcast()
    rep = CreekReplica(1, kernel, clocks, bcast, kernel.trace,
                       store if store is not None else {}, engine=engine,
                       slots=slots, read_only_shortcut=shortcut)
    rep.set_service_times({}, 1.0)
    kernel.register(1, rep.handle_event)
    return rep, kernel, bcast


def remote(rep, rid, ts, prog=None, strong=False, ctx=None, svc=1.0):
    req = Request(ts, rid, prog if prog is not None else script(("w", ("k",) + rid, 1)),
                  strong, ctx, svc)
    rep._on_rb_request(("request", req))
    return req


def responses(kernel, kind=None):
    out = []
    for t, _, rec, data in kernel.trace.records:
        if rec == "response" and (kind is None or data["kind"] == kind):
            out.append((t, data["id"], data["kind"], data["value"]))
    return out


# -- ordering rules -----------------------------------------------------------------


def test_plan_adjustment_prefix_case():
    a, b, c, d = "abcd"
    in_order, rb, todo = plan_adjustment([a, b, c], [a, b, c, d])
    assert in_order == [a, b, c] and rb == [] and todo == [d]


def test_plan_adjustment_insert_in_middle():
    a, b, c, x = "abcx"
    in_order, rb, todo = plan_adjustment([a, b, c], [a, x, b, c])
    assert in_order == [a]
    assert rb == [c, b]           # reverse execution order
    assert todo == [x, b, c]


def test_plan_adjustment_empty_executed():
    in_order, rb, todo = plan_adjustment([], ["a", "b"])
    assert in_order == [] and rb == [] and todo == ["a", "b"]


def test_tentative_insert_keeps_timestamp_order():
    rep, kernel, _ = make_replica()
    remote(rep, (2, 1), ts=5.0)
    remote(rep, (3, 1), ts=9.0)
    remote(rep, (4, 1), ts=7.0)
    assert [r.ts for r in rep.tentative] == [5.0, 7.0, 9.0]


def test_tail_insert_schedules_no_rollback():
    rep, kernel, _ = make_replica()
    remote(rep, (2, 1), ts=1.0)
    remote(rep, (2, 2), ts=2.0)
    kernel.run(until=10.0)  # both executed
    assert len(rep.exec_mgr.executed) == 2
    remote(rep, (2, 3), ts=3.0)
    assert rep.exec_mgr.to_rollback == []


def test_insert_before_executed_rolls_back_in_reverse_then_reexecutes():
    rep, kernel, _ = make_replica()
    a = remote(rep, (2, 1), ts=1.0)
    b = remote(rep, (2, 2), ts=2.0)
    c = remote(rep, (2, 3), ts=3.0)
    kernel.run(until=10.0)
    x = remote(rep, (3, 1), ts=1.5)  # lands between a and b
    assert [r.rid for r in rep.exec_mgr.to_rollback] == [c.rid, b.rid]
    assert rep.exec_mgr.executed == [a]
    kernel.run(until=30.0)
    rb_order = [d["id"] for _, _, rec, d in kernel.trace.records if rec == "rollback"]
    assert rb_order == [c.rid, b.rid]
    assert [r.rid for r in rep.exec_mgr.executed] == [a.rid, x.rid, b.rid, c.rid]


# -- checkDep ------------------------------------------------------------------------


def test_check_dep_unknown_request_is_false():
    rep, _, _ = make_replica()
    assert rep.check_dep((9, 9)) is False


def test_check_dep_subset_and_missing_dot():
    rep, kernel, _ = make_replica()
    remote(rep, (2, 1), ts=1.0)  # weak: enters causal context
    s = remote(rep, (3, 1), ts=2.0, strong=True, ctx=DotSet([(2, 1)]))
    assert rep.check_dep((3, 1)) is True
    s2 = remote(rep, (3, 2), ts=3.0, strong=True, ctx=DotSet([(2, 1), (2, 2)]))
    assert rep.check_dep((3, 2)) is False  # (2,2) not yet known
    remote(rep, (2, 2), ts=1.5)
    assert rep.check_dep((3, 2)) is True  # eventual stable evaluation


# -- invocation ------------------------------------------------------------------------


def test_weak_invoke_executes_and_responds_once():
    rep, kernel, bcast = make_replica()
    rid = rep.invoke(script(("w", "x", 1)), False)
    assert rid in {d for d in rep.causal_ctx}
    assert len(bcast.rb_casts) == 1 and bcast.cab_casts == []
    kernel.run(until=20.0)
    got = responses(kernel)
    assert [(x[1], x[2]) for x in got] == [(rid, "tentative")]


def test_weak_reexecution_does_not_reemit_response():
    rep, kernel, _ = make_replica()
    rid = rep.invoke(script(("r", "x")), False)
    kernel.run(until=10.0)
    remote(rep, (2, 1), ts=-1.0, prog=script(("w", "x", 5)))  # forces rollback + reexec
    kernel.run(until=40.0)
    assert [r.rid for r in rep.exec_mgr.executed][-1] == rid
    assert len(responses(kernel)) == 1  # deregistered on first response


def test_strong_invoke_casts_id_and_context_excludes_later_tentative():
    rep, kernel, bcast = make_replica()
    rep.invoke(script(("w", "a", 1)), False)        # earlier weak: in context
    remote(rep, (2, 1), ts=99.0)                     # later tentative: excluded
    rid = rep.invoke(script(("w", "b", 1)), True)
    assert bcast.cab_casts == [rid]
    req = rep.requests[rid]
    assert (1, 1) in req.ctx
    assert (2, 1) not in req.ctx
    assert rid not in {d for d in req.ctx}


def test_strong_op_gets_tentative_then_stable_response():
    rep, kernel, bcast = make_replica()
    rid = rep.invoke(script(("rmw", "x", 2)), True)
    kernel.run(until=10.0)  # speculative execution done
    rep.on_cab_deliver(rid)
    kernel.run(until=20.0)
    kinds = [x[2] for x in responses(kernel) if x[1] == rid]
    assert kinds == ["tentative", "stable"]
    vals = [x[3] for x in responses(kernel) if x[1] == rid]
    assert vals[0] == vals[1] == (2,)


def test_read_only_shortcut_skips_network():
    rep, kernel, bcast = make_replica(store={("stock", 1, 1): 9}, shortcut=True)
    from creeksim.workload import STOCK_LEVEL
    rid = rep.invoke((STOCK_LEVEL, (1, 1, 60, (1,))), False)
    kernel.run(until=10.0)
    assert bcast.rb_casts == [] and bcast.cab_casts == []
    assert rep.tentative == []
    got = responses(kernel)
    assert got[0][1] == rid and got[0][3] == ("low", 1)


# -- commit ------------------------------------------------------------------------------


def test_commit_moves_context_members_in_tentative_order():
    rep, kernel, _ = make_replica()
    w1 = remote(rep, (2, 1), ts=1.0)
    w2 = remote(rep, (2, 2), ts=2.0)
    s = remote(rep, (3, 1), ts=3.0, strong=True, ctx=DotSet([w1.rid]))
    rep.on_cab_deliver(s.rid)
    assert [r.rid for r in rep.committed] == [w1.rid, s.rid]
    assert [r.rid for r in rep.tentative] == [w2.rid]
    assert s.rid in {d for d in rep.causal_ctx}


def test_commit_with_fully_committed_context_appends_only_the_op():
    rep, kernel, _ = make_replica()
    w1 = remote(rep, (2, 1), ts=1.0)
    s1 = remote(rep, (3, 1), ts=2.0, strong=True, ctx=DotSet([w1.rid]))
    rep.on_cab_deliver(s1.rid)
    s2 = remote(rep, (3, 2), ts=4.0, strong=True, ctx=DotSet([w1.rid]))
    rep.on_cab_deliver(s2.rid)
    assert [r.rid for r in rep.committed] == [w1.rid, s1.rid, s2.rid]


def test_commit_preserves_relative_order_of_context_members():
    rep, kernel, _ = make_replica()
    ws = [remote(rep, (2, n), ts=float(n)) for n in (1, 2, 3)]
    s = remote(rep, (3, 1), ts=9.0, strong=True,
               ctx=DotSet([ws[0].rid, ws[2].rid]))
    rep.on_cab_deliver(s.rid)
    assert [r.rid for r in rep.committed] == [ws[0].rid, ws[2].rid, s.rid]
    assert [r.rid for r in rep.tentative] == [ws[1].rid]


def test_cab_deliver_without_request_is_violation():
    rep, _, _ = make_replica()
    with pytest.raises(ProtocolViolation):
        rep.on_cab_deliver((9, 9))


def test_strong_reexecutions_emit_tentatives_then_one_stable():
    rep, kernel, _ = make_replica()
    rid = rep.invoke(script(("r", "x"), ("rmw", "y", 1)), True)
    kernel.run(until=10.0)
    # a conflicting earlier weak op forces rollback + tentative reexecution
    w = remote(rep, (2, 1), ts=-1.0, prog=script(("w", "x", 7)))
    kernel.run(until=40.0)
    s_req = rep.requests[rid]
    s_req.ctx = DotSet([w.rid])
    rep.on_cab_deliver(rid)
    kernel.run(until=80.0)
    kinds = [x[2] for x in responses(kernel) if x[1] == rid]
    assert kinds.count("stable") == 1
    assert kinds[-1] == "stable"
    assert kinds.count("tentative") >= 2  # differing responses re-emitted
    vals = [x[3] for x in responses(kernel) if x[1] == rid]
    assert vals[0] == (None, 1) and vals[-1] == (7, 1)


def test_committed_prefix_is_append_only():
    rep, kernel, _ = make_replica()
    seen = []
    ws = [remote(rep, (2, n), ts=float(n)) for n in (1, 2, 3, 4)]
    s1 = remote(rep, (3, 1), ts=5.0, strong=True, ctx=DotSet([ws[0].rid, ws[1].rid]))
    rep.on_cab_deliver(s1.rid)
    seen.append([r.rid for r in rep.committed])
    s2 = remote(rep, (3, 2), ts=6.0, strong=True, ctx=DotSet([ws[2].rid]))
    rep.on_cab_deliver(s2.rid)
    seen.append([r.rid for r in rep.committed])
    assert seen[1][: len(seen[0])] == seen[0]


# -- response correctness oracle ------------------------------------------------------------


@pytest.mark.parametrize("engine", ["reference", "multiversion"])
def test_every_response_matches_prefix_replay(engine):
    rep, kernel, _ = make_replica(engine=engine)
    emitted = []
    original = rep._respond

    def spy(req, kind, value):
        emitted.append((req.rid, kind, value,
                        [r.rid for r in rep.order[: rep.pos[req.rid] + 1]]))
        original(req, kind, value)

    rep._respond = spy
    progs = {}
    rid = rep.invoke(script(("rmw", "k", 1)), False)
    progs[rid] = rep.requests[rid].prog
    kernel.run(until=5.0)
    for n, ts in ((1, -2.0), (2, -1.0)):
        r = remote(rep, (2, n), ts=ts, prog=script(("rmw", "k", 10 * n)))
        progs[r.rid] = r.prog
        kernel.run(until=5.0 + n * 10)
    s = remote(rep, (3, 1), ts=50.0, strong=True, ctx=DotSet(list(progs)))
    progs[s.rid] = s.prog
    kernel.run(until=100.0)
    rep.on_cab_deliver(s.rid)
    kernel.run(until=200.0)
    for rid, kind, value, prefix in emitted:
        _, oracle_responses = oracle_execute([progs[p] for p in prefix], store={})
        assert value == oracle_responses[-1], (rid, kind)
