import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from creeksim.engine import MultiVersionEngine, ReferenceEngine
from creeksim.sim import ProtocolViolation
from creeksim.workload import SCRIPT

# -- reference (undo log) engine ------------------------------------------------


def script(*steps):
    return (SCRIPT, tuple(steps))


def test_write_then_read_single_copy():
    eng = ReferenceEngine({})
    eng.execute((1, 1), script(("w", "x", 5)))
    resp = eng.execute((1, 2), script(("r", "x")))
    assert resp == (5,)


def test_double_write_keeps_original_in_undo():
    eng = ReferenceEngine({"x": 1})
    eng.execute((1, 1), script(("w", "x", 2), ("w", "x", 3)))
    assert eng.db["x"] == 3
    assert eng.undo[(1, 1)] == {"x": 1}
    eng.rollback((1, 1))
    assert eng.db["x"] == 1


def test_execute_two_rollback_reverse_is_identity():
    eng = ReferenceEngine({"x": 1, "y": 2})
    before = eng.dump()
    eng.execute((1, 1), script(("rmw", "x", 10)))
    eng.execute((1, 2), script(("rmw", "x", 5), ("w", "y", 99)))
    eng.rollback((1, 2))
    eng.rollback((1, 1))
    assert eng.dump() == before


def test_rollback_of_op_that_wrote_nothing_is_noop():
    eng = ReferenceEngine({"x": 1})
    eng.execute((1, 1), script(("r", "x")))
    eng.rollback((1, 1))
    assert eng.dump() == {"x": 1}


def test_rollback_then_reexecute_same_state_same_response():
    eng = ReferenceEngine({"x": 3})
    r1 = eng.execute((1, 1), script(("rmw", "x", 4)))
    eng.rollback((1, 1))
    r2 = eng.execute((1, 1), script(("rmw", "x", 4)))
    assert r1 == r2 == (7,)


def test_rollback_of_never_executed_request_is_violation():
    eng = ReferenceEngine({})
    with pytest.raises(ProtocolViolation):
        eng.rollback((9, 9))


def test_access_sets_recorded():
    eng = ReferenceEngine({"a": 1})
    eng.execute((1, 1), script(("r", "a"), ("w", "b", 2)))
    reads, writes = eng.access[(1, 1)]
    assert reads == {"a"} and writes == {"b"}


_step = st.one_of(
    st.tuples(st.just("r"), st.integers(0, 5)),
    st.tuples(st.just("w"), st.integers(0, 5), st.integers(-9, 9)),
    st.tuples(st.just("rmw"), st.integers(0, 5), st.integers(-9, 9)),
)


@settings(max_examples=60)
@given(st.lists(st.lists(_step, min_size=1, max_size=5), min_size=1, max_size=8))
def test_undo_soundness_randomized(programs):
    base = {k: k * 10 for k in range(3)}
    eng = ReferenceEngine(base)
    snapshot = eng.dump()
    rids = []
    for n, steps in enumerate(programs, 1):
        rid = (1, n)
        rids.append(rid)
        eng.execute(rid, script(*steps))
    for rid in reversed(rids):
        eng.rollback(rid)
    assert eng.dump() == snapshot


def test_reverse_order_cascade_matches_snapshot_oracle():
    rng = random.Random(99)
    base = {k: 0 for k in range(4)}
    eng = ReferenceEngine(base)
    checkpoints = [eng.dump()]
    rids = []
    for n in range(1, 21):
        steps = [("rmw", rng.randint(0, 3), rng.randint(1, 5)) for _ in range(rng.randint(1, 4))]
        rid = (1, n)
        rids.append(rid)
        eng.execute(rid, script(*steps))
        checkpoints.append(eng.dump())
    k = rng.randint(1, 20)
    for rid in reversed(rids[-k:]):
        eng.rollback(rid)
    assert eng.dump() == checkpoints[len(rids) - k]


# -- multiversion engine -----------------------------------------------------------


def mv(base=None):
    return MultiVersionEngine(base if base is not None else {})


def pos_of(order):
    return {rid: i for i, rid in enumerate(order)}


def test_snapshot_reads_greatest_preceding_creator():
    eng = mv({"x": 0})
    order = [(1, 1), (1, 2), (1, 3)]
    pos = pos_of(order)
    eng.mv_execute((1, 1), script(("w", "x", 10)), pos, 0)
    eng.mv_execute((1, 3), script(("w", "x", 30)), pos, 2)
    # op at index 1 must see (1,1)'s version, not (1,3)'s
    resp, access, ok, invalidated = eng.mv_execute((1, 2), script(("r", "x")), pos, 1)
    assert ok and resp == (10,)
    # a later snapshot sees the final write
    snap = eng.open_snapshot((9, 9), pos, 3)
    read, _ = eng.read_view(snap)
    assert read("x") == 30
    eng.close_snapshot(snap)


def test_disjoint_ops_reordered_do_not_invalidate():
    base = {"a": 1, "b": 2}
    ref = ReferenceEngine(base)
    eng = mv(base)
    i, j, x = (1, 1), (1, 2), (2, 1)
    # i and j execute under the initial order [i, j]
    pos = pos_of([i, j])
    eng.mv_execute(i, script(("rmw", "a", 5)), pos, 0)
    eng.mv_execute(j, script(("rmw", "b", 7)), pos, 1)
    # x arrives before both; it writes distinct data
    pos = pos_of([x, i, j])
    _, _, ok, invalidated = eng.mv_execute(x, script(("w", "c", 3)), pos, 0)
    assert ok and invalidated == []
    # reference engine replay in final order gives the same store
    for rid, prog in ((x, script(("w", "c", 3))), (i, script(("rmw", "a", 5))),
                      (j, script(("rmw", "b", 7)))):
        ref.execute(rid, prog)
    assert eng.dump(pos) == ref.dump()


def test_insert_before_executed_without_read_overlap_keeps_it():
    eng = mv({"a": 1, "d": 0})
    i, x = (1, 1), (2, 1)
    pos = pos_of([i])
    eng.mv_execute(i, script(("r", "a"), ("w", "b", 2)), pos, 0)
    pos = pos_of([x, i])
    _, _, ok, invalidated = eng.mv_execute(x, script(("w", "d", 9)), pos, 0)
    assert ok and invalidated == []
    assert eng.is_installed(i)


def test_conflict_cascade_case1_no_read_overlap():
    # i reads {a} writes {b}; j reads {b} writes {c}; x writes {d}: nobody moves
    eng = mv({"a": 1, "b": 0, "c": 0, "d": 0})
    i, j, x = (1, 1), (1, 2), (2, 1)
    pos = pos_of([i, j])
    eng.mv_execute(i, script(("r", "a"), ("w", "b", 1)), pos, 0)
    eng.mv_execute(j, script(("r", "b"), ("w", "c", 1)), pos, 1)
    pos = pos_of([x, i, j])
    _, _, ok, invalidated = eng.mv_execute(x, script(("w", "d", 1)), pos, 0)
    assert ok and invalidated == []


def test_conflict_cascade_case2_transitive():
    # x writes {a}: i (reads a) falls, then j (read i's b) falls with it
    eng = mv({"a": 1, "b": 0, "c": 0})
    i, j, x = (1, 1), (1, 2), (2, 1)
    pos = pos_of([i, j])
    eng.mv_execute(i, script(("r", "a"), ("w", "b", 1)), pos, 0)
    eng.mv_execute(j, script(("r", "b"), ("w", "c", 1)), pos, 1)
    pos = pos_of([x, i, j])
    _, _, ok, invalidated = eng.mv_execute(x, script(("w", "a", 5)), pos, 0)
    assert ok
    assert invalidated == [i, j]
    assert not eng.is_installed(i) and not eng.is_installed(j)


def test_invalidate_empty_writeset_affects_nobody():
    eng = mv({"a": 1})
    i = (1, 1)
    pos = pos_of([i])
    eng.mv_execute(i, script(("r", "a")), pos, 0)
    assert eng.invalidate(i, pos) == []


def test_invalidate_reports_readers_of_written_objects():
    eng = mv({})
    r1, r2 = (1, 1), (1, 2)
    pos = pos_of([r1, r2])
    eng.mv_execute(r1, script(("w", "x", 1)), pos, 0)
    eng.mv_execute(r2, script(("r", "x")), pos, 1)
    assert eng.invalidate(r1, pos) == [r2]


def test_stale_snapshot_is_discarded_and_signals_reexecute():
    eng = mv({"x": 0})
    a, b = (1, 1), (1, 2)
    pos = pos_of([a, b])
    # b starts first on a snapshot that misses a's write
    snap_b = eng.open_snapshot(b, dict(pos), 1)
    result_b = eng.execute_on(snap_b, script(("r", "x"), ("w", "y", 1)))
    eng.mv_execute(a, script(("w", "x", 7)), pos, 0)
    ok, invalidated = eng.try_install(snap_b, result_b, pos)
    assert not ok and invalidated == []
    assert not eng.is_installed(b)
    # reexecution on a fresh snapshot sees a's write
    resp, _, ok, _ = eng.mv_execute(b, script(("r", "x"), ("w", "y", 1)), pos, 1)
    assert ok and resp == (7,)


def test_install_checks_catch_slow_earlier_writer():
    # a (earlier position) installs after b already installed: b must fall
    eng = mv({"x": 0})
    a, b = (1, 1), (1, 2)
    pos = pos_of([a, b])
    snap_a = eng.open_snapshot(a, dict(pos), 0)
    result_a = eng.execute_on(snap_a, script(("w", "x", 7)))
    eng.mv_execute(b, script(("r", "x"), ("w", "y", 1)), pos, 1)
    ok, invalidated = eng.try_install(snap_a, result_a, pos)
    assert ok and invalidated == [b]


def test_gc_shrinks_committed_chain_to_most_recent():
    eng = mv({"x": 0})
    order = [(1, n) for n in range(1, 6)]
    pos = pos_of(order)
    for n in range(1, 6):
        eng.mv_execute((1, n), script(("w", "x", n)), pos, n - 1)
    reclaimed = eng.gc(pos, committed_len=5, exec_floor=5, full=True)
    assert reclaimed == 4
    assert len(eng.versions["x"]) == 1
    assert eng.dump(pos)["x"] == 5


def test_gc_retains_versions_needed_by_open_snapshot():
    eng = mv({"x": 0})
    order = [(1, 1), (1, 2), (9, 9)]
    pos = pos_of(order)
    eng.mv_execute((1, 1), script(("w", "x", 1)), pos, 0)
    snap = eng.open_snapshot((9, 9), dict(pos), 2)  # will read under old state
    eng.mv_execute((1, 2), script(("w", "x", 2)), pos, 1)
    eng.gc(pos, committed_len=2, exec_floor=2, full=True)
    read, _ = eng.read_view(snap)
    assert read("x") == 1  # version installed after the cut is invisible
    eng.close_snapshot(snap)


def test_gc_reclaims_unreferenced_invalidated_versions():
    eng = mv({})
    a = (1, 1)
    pos = pos_of([a])
    eng.mv_execute(a, script(("w", "x", 1)), pos, 0)
    eng.invalidate(a, pos)
    assert eng.gc(pos, committed_len=0, exec_floor=0, full=True) == 1
    assert "x" not in eng.versions


def test_no_committed_ops_reclaims_nothing_beyond_invalidated():
    eng = mv({})
    pos = pos_of([(1, 1), (1, 2)])
    eng.mv_execute((1, 1), script(("w", "x", 1)), pos, 0)
    eng.mv_execute((1, 2), script(("w", "x", 2)), pos, 1)
    assert eng.gc(pos, committed_len=0, exec_floor=2, full=True) == 0
    assert len(eng.versions["x"]) == 2


def test_cross_engine_equivalence_randomized():
    rng = random.Random(5)
    keys = list(range(6))
    base = {k: 0 for k in keys}
    for trial in range(20):
        n = rng.randint(3, 10)
        progs = {}
        for idx in range(n):
            steps = []
            for _ in range(rng.randint(1, 3)):
                kind = rng.choice(["r", "w", "rmw"])
                k = rng.choice(keys)
                steps.append((kind, k) if kind == "r" else (kind, k, rng.randint(1, 9)))
            progs[(1, idx + 1)] = script(*steps)
        order = list(progs)
        rng.shuffle(order)
        pos = pos_of(order)
        eng = mv(base)
        # install in arbitrary execution order; engine fixes conflicts
        exec_seq = list(progs)
        rng.shuffle(exec_seq)
        pending = list(exec_seq)
        while pending:
            rid = pending.pop(0)
            if eng.is_installed(rid):
                continue
            _, _, ok, invalidated = eng.mv_execute(rid, progs[rid], pos, pos[rid])
            if not ok:
                pending.append(rid)
            pending.extend(invalidated)
        ref = ReferenceEngine(base)
        for rid in order:
            ref.execute(rid, progs[rid])
        assert eng.dump(pos) == ref.dump(), f"trial {trial}"
        for rid in order:
            assert eng.response_of(rid) == ref_response(ref, base, order, progs, rid)


def ref_response(ref, base, order, progs, rid):
    replay = ReferenceEngine(base)
    for r in order:
        resp = replay.execute(r, progs[r])
        if r == rid:
            return resp
    raise AssertionError
