import copy

from creeksim.checks import (
    build_checker_input,
    check_convergence,
    check_linearizability,
    check_prefix_agreement,
)
from creeksim.config import ExperimentConfig
from creeksim.runner import run_simulation


def clean_input(seed=21, **kw):
    cfg = ExperimentConfig(seed=seed, ops=150, arrival_rate_tps=2500, **kw)
    result = run_simulation(cfg)
    assert result.quiesced
    return build_checker_input(result)


def test_all_checkers_pass_on_clean_run():
    inp = clean_input()
    assert check_convergence(inp).passed
    assert check_linearizability(inp).passed
    assert check_prefix_agreement(inp).passed


def test_checkers_pass_on_reference_engine_run():
    inp = clean_input(seed=22, engine="reference")
    assert check_convergence(inp).passed
    assert check_linearizability(inp).passed
    assert check_prefix_agreement(inp).passed


def test_convergence_fails_on_corrupted_store_key():
    inp = clean_input(seed=23)
    mutated = copy.deepcopy(inp)
    replica = mutated.alive[-1]
    key = next(k for k in sorted(mutated.dumps[replica], key=repr) if k[0] == "w_ytd")
    mutated.dumps[replica] = dict(mutated.dumps[replica])
    mutated.dumps[replica][key] += 1
    verdict = check_convergence(mutated)
    assert not verdict.passed
    assert "w_ytd" in verdict.detail
    assert verdict.seed == mutated.seed


def test_convergence_fails_on_order_divergence():
    inp = clean_input(seed=24)
    mutated = copy.deepcopy(inp)
    replica = mutated.alive[-1]
    order = mutated.orders[replica]
    order[0], order[1] = order[1], order[0]
    verdict = check_convergence(mutated)
    assert not verdict.passed and "divergence" in verdict.detail


def test_convergence_fails_when_dump_disagrees_with_replay():
    inp = clean_input(seed=25)
    mutated = copy.deepcopy(inp)
    for replica in mutated.alive:  # corrupt everyone identically
        key = next(k for k in sorted(mutated.dumps[replica], key=repr) if k[0] == "c_bal")
        mutated.dumps[replica] = dict(mutated.dumps[replica])
        mutated.dumps[replica][key] += 7
    verdict = check_convergence(mutated)
    assert not verdict.passed and "replay" in verdict.detail


def test_linearizability_fails_on_swapped_strong_commits():
    inp = clean_input(seed=26)
    mutated = copy.deepcopy(inp)
    committed = mutated.committed[min(mutated.alive)]
    strong_pos = [i for i, rid in enumerate(committed) if rid in mutated.strong
                  and rid in mutated.stable]
    # find a pair where the earlier one's stable response precedes the later
    # one's invocation: swapping must break real-time order
    pair = None
    for a_idx in strong_pos:
        for b_idx in strong_pos:
            if a_idx < b_idx and \
                    mutated.stable[committed[a_idx]][0] < mutated.invoke_t[committed[b_idx]]:
                pair = (a_idx, b_idx)
                break
        if pair:
            break
    assert pair is not None, "workload produced no sequential strong pair"
    a, b = pair
    committed[a], committed[b] = committed[b], committed[a]
    verdict = check_linearizability(mutated)
    assert not verdict.passed
    assert verdict.event_index is not None


def test_linearizability_fails_on_corrupted_stable_value():
    inp = clean_input(seed=27)
    mutated = copy.deepcopy(inp)
    rid = sorted(mutated.stable)[0]
    t, value, idx = mutated.stable[rid]
    mutated.stable[rid] = (t, ("bal", -999_999), idx)
    verdict = check_linearizability(mutated)
    assert not verdict.passed and "replay" in verdict.detail


def test_linearizability_fails_on_context_after_op():
    inp = clean_input(seed=28)
    mutated = copy.deepcopy(inp)
    ref = min(mutated.alive)
    committed = mutated.committed[ref]
    # claim some strong op causally depends on the last committed op
    target = next(rid for rid in committed[:-1] if rid in mutated.strong)
    mutated.strong_ctx[target] = (committed[-1],)
    verdict = check_linearizability(mutated)
    assert not verdict.passed and "context" in verdict.detail


def test_prefix_agreement_fails_on_dropped_commit():
    inp = clean_input(seed=29)
    mutated = copy.deepcopy(inp)
    victim = max(mutated.alive)
    events = [e for e in mutated.commit_events if e[2] == victim]
    assert len(events) > 2
    dropped = events[1]
    mutated.commit_events.remove(dropped)
    verdict = check_prefix_agreement(mutated)
    assert not verdict.passed
    assert verdict.event_index is not None
    assert f"r{victim}" in verdict.detail


def test_prefix_agreement_fails_on_swapped_commit_stream():
    inp = clean_input(seed=30)
    mutated = copy.deepcopy(inp)
    victim = max(mutated.alive)
    events = [e for e in mutated.commit_events if e[2] == victim]
    i1 = mutated.commit_events.index(events[0])
    i2 = mutated.commit_events.index(events[1])
    e1, e2 = mutated.commit_events[i1], mutated.commit_events[i2]
    mutated.commit_events[i1] = (e1[0], e1[1], victim, e2[3], e1[4])
    mutated.commit_events[i2] = (e2[0], e2[1], victim, e1[3], e2[4])
    verdict = check_prefix_agreement(mutated)
    assert not verdict.passed


def test_verdict_failures_carry_replay_information():
    inp = clean_input(seed=31)
    mutated = copy.deepcopy(inp)
    events = [e for e in mutated.commit_events if e[2] == mutated.alive[0]]
    mutated.commit_events.remove(events[0])
    verdict = check_prefix_agreement(mutated)
    assert not verdict.passed
    assert verdict.seed == 31
    assert isinstance(verdict.event_index, int)
