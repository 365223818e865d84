"""Consistency checkers over run traces: convergence, linearizability of
strong operations, and committed-prefix agreement. Failures carry a
replayable seed and trace-record index."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .workload import oracle_execute


@dataclass
class Verdict:
    name: str
    passed: bool
    detail: str = ""
    seed: int = 0
    event_index: Optional[int] = None

    def __str__(self):
        state = "PASS" if self.passed else "FAIL"
        extra = f" [{self.detail}]" if self.detail and not self.passed else ""
        where = f" (seed={self.seed}, event={self.event_index})" if not self.passed else ""
        return f"{self.name}: {state}{extra}{where}"


@dataclass
class CheckerInput:
    """Plain-data view of a finished run, mutable for checker self-tests."""

    seed: int
    warehouses: int
    alive: list[int] = field(default_factory=list)
    end_group: dict = field(default_factory=dict)      # replica -> partition group at end
    commit_events: list = field(default_factory=list)  # (trace_idx, t, replica, rid, pos)
    committed: dict = field(default_factory=dict)      # replica -> [rid] at quiescence
    orders: dict = field(default_factory=dict)         # replica -> committed+tentative [rid]
    dumps: dict = field(default_factory=dict)          # replica -> {oid: value}
    programs: dict = field(default_factory=dict)       # rid -> program
    strong: set = field(default_factory=set)
    strong_ctx: dict = field(default_factory=dict)     # rid -> tuple of dots
    invoke_t: dict = field(default_factory=dict)
    stable: dict = field(default_factory=dict)         # rid -> (t, value, trace_idx)


def build_checker_input(result) -> CheckerInput:
    inp = CheckerInput(seed=result.config.seed, warehouses=result.config.warehouses)
    inp.alive = list(result.alive)
    inp.end_group = dict(result.end_group)
    inp.committed = {r: list(v) for r, v in result.committed.items()}
    inp.orders = {r: list(result.committed[r]) + list(result.tentative[r])
                  for r in result.committed}
    inp.dumps = result.dumps
    inp.programs = result.programs
    inp.strong = set(result.strong)
    inp.strong_ctx = result.strong_ctx
    for idx, (t, replica, kind, data) in enumerate(result.trace.records):
        if kind == "invoke":
            inp.invoke_t.setdefault(data["id"], t)
        elif kind == "commit":
            inp.commit_events.append((idx, t, replica, data["id"], data["pos"]))
        elif kind == "response" and data["kind"] == "stable":
            inp.stable.setdefault(data["id"], (t, data["value"], idx))
    return inp


def check_convergence(inp: CheckerInput) -> Verdict:
    """All correct replicas (per partition group at quiescence) hold identical
    orders and store dumps, and the dump equals a sequential replay."""
    name = "convergence"
    groups: dict = {}
    for r in inp.alive:
        groups.setdefault(inp.end_group.get(r, 0), []).append(r)
    for gid in sorted(groups):
        members = sorted(groups[gid])
        ref = members[0]
        ref_order = inp.orders[ref]
        for other in members[1:]:
            if inp.orders[other] != ref_order:
                limit = min(len(ref_order), len(inp.orders[other]))
                at = next((i for i in range(limit)
                           if ref_order[i] != inp.orders[other][i]), limit)
                return Verdict(name, False, seed=inp.seed,
                               detail=f"order divergence r{ref}/r{other} at pos {at}")
            if inp.dumps[other] != inp.dumps[ref]:
                key = _first_divergent_key(inp.dumps[ref], inp.dumps[other])
                return Verdict(name, False, seed=inp.seed,
                               detail=f"store divergence r{ref}/r{other} at {key}")
        expected, _ = oracle_execute([inp.programs[rid] for rid in ref_order],
                                     warehouses=inp.warehouses)
        if inp.dumps[ref] != expected:
            key = _first_divergent_key(expected, inp.dumps[ref])
            return Verdict(name, False, seed=inp.seed,
                           detail=f"r{ref} store != sequential replay at {key}")
    return Verdict(name, True)


def _first_divergent_key(a: dict, b: dict):
    for key in sorted(set(a) | set(b), key=repr):
        if a.get(key) != b.get(key):
            return key
    return None


def check_linearizability(inp: CheckerInput) -> Verdict:
    """Strong ops respect real-time order in the committed sequence; every
    stable response equals sequential replay of its committed prefix; causal
    contexts precede their op."""
    name = "linearizability"
    ref = min(inp.alive) if inp.alive else None
    if ref is None:
        return Verdict(name, True)
    committed = inp.committed[ref]
    pos = {rid: i for i, rid in enumerate(committed)}

    # (a) real-time precedence: if A's stable response precedes B's invocation,
    # A must precede B in the committed order
    timed = sorted((pos[rid], rid) for rid in inp.strong if rid in pos)
    suffix_min = [(float("inf"), None)] * (len(timed) + 1)
    for i in range(len(timed) - 1, -1, -1):
        rid = timed[i][1]
        st = inp.stable[rid][0] if rid in inp.stable else float("inf")
        prev = suffix_min[i + 1]
        suffix_min[i] = (st, rid) if st < prev[0] else prev
    for i, (_, rid) in enumerate(timed):
        later_stable, bad = suffix_min[i + 1]
        if bad is not None and later_stable < inp.invoke_t.get(rid, float("inf")):
            return Verdict(name, False, seed=inp.seed,
                           event_index=inp.stable[bad][2],
                           detail=f"{bad} stable before {rid} invoked but ordered after")

    # (b) stable responses equal sequential replay of the committed prefix
    _, oracle_resp = oracle_execute([inp.programs[rid] for rid in committed],
                                    warehouses=inp.warehouses)
    for rid, (t, value, idx) in sorted(inp.stable.items()):
        at = pos.get(rid)
        if at is None:
            return Verdict(name, False, seed=inp.seed, event_index=idx,
                           detail=f"stable response for uncommitted {rid}")
        if oracle_resp[at] != value:
            return Verdict(name, False, seed=inp.seed, event_index=idx,
                           detail=f"{rid} stable {value!r} != replay {oracle_resp[at]!r}")

    # (c) causal context precedes the op in the committed order
    for rid in sorted(inp.strong):
        at = pos.get(rid)
        if at is None:
            continue
        for dot in inp.strong_ctx.get(rid, ()):
            dp = pos.get(dot)
            if dp is None or dp > at:
                return Verdict(name, False, seed=inp.seed,
                               detail=f"context {dot} of {rid} not committed before it")
    return Verdict(name, True)


def check_prefix_agreement(inp: CheckerInput) -> Verdict:
    """At every commit instant the committed sequences of all replicas are
    pairwise prefix-comparable (checked exactly, at every commit event)."""
    name = "prefix-agreement"
    logs: dict[int, list] = {}
    for idx, t, replica, rid, pos in inp.commit_events:
        log = logs.setdefault(replica, [])
        if pos != len(log):
            return Verdict(name, False, seed=inp.seed, event_index=idx,
                           detail=f"r{replica} commit at pos {pos}, expected {len(log)}")
        log.append(rid)
        for other, olog in logs.items():
            if other != replica and len(olog) > pos and olog[pos] != rid:
                return Verdict(name, False, seed=inp.seed, event_index=idx,
                               detail=f"r{replica}[{pos}]={rid} but r{other}[{pos}]={olog[pos]}")
    return Verdict(name, True)


CHECKERS = {
    "convergence": check_convergence,
    "linearizability": check_linearizability,
    "prefix-agreement": check_prefix_agreement,
}


def run_checks(inp: CheckerInput, names) -> list[Verdict]:
    return [CHECKERS[n](inp) for n in names]
