"""Experiment driver: assembles a seeded cluster for the selected system,
injects the workload, runs to quiescence, and extracts metrics + verdicts."""

from __future__ import annotations

from dataclasses import dataclass, field

from .baselines import ArchieReplica, BayouReplica, SmrReplica
from .broadcast import BroadcastNode
from .checks import CheckerInput, Verdict, build_checker_input, run_checks
from .config import ExperimentConfig
from .metrics import MetricsReport, extract_metrics
from .replica import CreekReplica
from .sim import MSG_ARRIVAL, TIMER, Clocks, Kernel, Network, Trace
from .workload import PAYMENT, generate_arrivals, initial_store, oracle_execute


class _Node:
    __slots__ = ("bcast", "replica")

    def __init__(self, bcast: BroadcastNode, replica):
        self.bcast = bcast
        self.replica = replica

    def handle(self, kind: str, payload) -> None:
        if kind == MSG_ARRIVAL:
            channel, src, body = payload
            self.bcast.handle_message(channel, src, body)
        elif kind == TIMER:
            name = payload[0]
            if name in ("ae", "hb"):
                self.bcast.handle_timer(name)
            elif name == "client":
                self.replica.invoke(payload[1], payload[2])
            else:
                self.replica.handle_event(kind, payload)
        else:
            self.replica.handle_event(kind, payload)


@dataclass
class RunResult:
    config: ExperimentConfig
    trace: Trace
    quiesced: bool = False
    events: int = 0
    alive: list = field(default_factory=list)
    end_group: dict = field(default_factory=dict)
    committed: dict = field(default_factory=dict)
    tentative: dict = field(default_factory=dict)
    dumps: dict = field(default_factory=dict)
    programs: dict = field(default_factory=dict)
    strong: set = field(default_factory=set)
    strong_ctx: dict = field(default_factory=dict)
    invokes: dict = field(default_factory=dict)     # rid -> (t, replica, type, strong, ro)
    responses: list = field(default_factory=list)   # (t, replica, rid, kind, value, strong)
    predicted: list = field(default_factory=list)   # (t, replica, rid, value)
    stable_values: dict = field(default_factory=dict)
    exec_stats: dict = field(default_factory=dict)
    msg_count: dict = field(default_factory=dict)
    msg_bytes: dict = field(default_factory=dict)

    def final_order(self) -> list:
        if not self.alive:
            return []
        ref = min(self.alive)
        return list(self.committed[ref]) + list(self.tentative[ref])


class Cluster:
    def __init__(self, cfg: ExperimentConfig):
        cfg.validate()
        self.cfg = cfg
        n = cfg.replicas
        self.kernel = Kernel(cfg.seed)
        self.trace = self.kernel.trace
        self.net = Network(self.kernel, n, cfg.latency_low_ms, cfg.latency_high_ms)
        self.clocks = Clocks(self.kernel, n, cfg.skew_ms)
        for t_from, t_to, groups in cfg.partitions:
            self.net.set_partition([list(g) for g in groups], t_from, t_to)
        for replica, t in cfg.crashes:
            self.kernel.crash_at(replica, t)

        store = initial_store(cfg.warehouses)
        profile = cfg.workload_profile()
        svc_table = {PAYMENT: cfg.service_payment_ms * cfg.service_multiplier}
        svc_default = cfg.service_weak_ms * cfg.service_multiplier

        self.nodes: dict[int, _Node] = {}
        for i in range(1, n + 1):
            bcast = BroadcastNode(i, n, self.kernel, self.net, self.trace,
                                  ae_ms=cfg.anti_entropy_ms, hb_ms=cfg.heartbeat_ms,
                                  leader_timeout_ms=cfg.leader_timeout_ms)
            bcast.timers_enabled = self.timers_active
            replica = self._build_replica(cfg, i, bcast, store)
            replica.set_service_times(svc_table, svc_default)
            node = _Node(bcast, replica)
            self.nodes[i] = node
            self.kernel.register(i, node.handle)

        self.arrivals = generate_arrivals(self.kernel.rng("workload"), profile, n)
        self.last_arrival = self.arrivals[-1].t if self.arrivals else 0.0
        for a in self.arrivals:
            self.kernel.schedule_at(a.t, a.replica, TIMER, ("client", a.prog, a.strong))
        for node in self.nodes.values():
            node.bcast.start_timers()
            node.replica.start_timers()

    def _build_replica(self, cfg: ExperimentConfig, i: int, bcast: BroadcastNode, store: dict):
        if cfg.system == "creek":
            return CreekReplica(i, self.kernel, self.clocks, bcast, self.trace, store,
                                engine=cfg.engine, slots=cfg.slots,
                                rollback_ms=cfg.rollback_ms,
                                read_only_shortcut=cfg.read_only_shortcut,
                                noop_flush_ms=cfg.noop_flush_ms)
        cls = {"smr": SmrReplica, "bayou": BayouReplica, "archie": ArchieReplica}[cfg.system]
        return cls(i, self.kernel, self.clocks, bcast, self.trace, store,
                   slots=cfg.slots, rollback_ms=cfg.rollback_ms)

    # -- quiescence ---------------------------------------------------------------

    def alive(self) -> list[int]:
        return [i for i in self.nodes if not self.kernel.crashed(i)]

    def timers_active(self) -> bool:
        return not (self.kernel.now >= self.last_arrival and self.quiescent())

    def quiescent(self) -> bool:
        now = self.kernel.now
        if now < self.last_arrival:
            return False
        alive = self.alive()
        if not alive:
            return True
        for t_from, t_to, _ in self.cfg.partitions:
            if now < t_to and t_from <= now:
                return False
        if any(t > now for _, t, _ in self.cfg.partitions):
            pass  # future partitions cannot create work on their own
        ref_have = None
        for i in alive:
            node = self.nodes[i]
            if not node.replica.quiescent():
                return False
            if node.bcast.inflight:
                return False
            if ref_have is None:
                ref_have = node.bcast.have
            elif not (node.bcast.have == ref_have):
                return False
        # every deliverable cast id must be delivered at every alive replica
        deliverable: set = set()
        for i in alive:
            for rid in self.nodes[i].bcast.undelivered_ids():
                if any(rid in self.nodes[j].replica.requests for j in alive):
                    deliverable.add(rid)
        return not deliverable

    # -- run ---------------------------------------------------------------------

    def run(self) -> RunResult:
        cfg = self.cfg
        self.kernel.run(until=cfg.cap_ms())
        result = RunResult(config=cfg, trace=self.trace)
        result.quiesced = self.quiescent()
        result.events = self.kernel.events_processed
        result.alive = self.alive()
        result.end_group = {i: self.net.group_of(i, self.kernel.now) for i in result.alive}
        for i in result.alive:
            replica = self.nodes[i].replica
            result.committed[i] = replica.committed_ids()
            result.tentative[i] = replica.tentative_ids()
            result.dumps[i] = replica.dump()
        for i in self.nodes:
            replica = self.nodes[i].replica
            mgr = replica.exec_mgr
            result.exec_stats[i] = {
                "execs": mgr.exec_count,
                "rollbacks": mgr.rollback_count,
                "busy_ms": mgr.busy_ms,
                "slots": mgr.slots,
            }
            for rid, req in replica.requests.items():
                if rid not in result.programs:
                    result.programs[rid] = req.prog
                    if req.strong:
                        result.strong.add(rid)
                        if req.ctx is not None:
                            result.strong_ctx[rid] = tuple(req.ctx)
        for t, replica, kind, data in self.trace.records:
            if kind == "invoke":
                result.invokes[data["id"]] = (t, replica, data["type"],
                                              data["strong"], data["ro"])
            elif kind == "response":
                result.responses.append((t, replica, data["id"], data["kind"],
                                         data["value"], data["strong"]))
                if data["kind"] == "stable":
                    result.stable_values.setdefault(data["id"], data["value"])
            elif kind == "predicted-tentative":
                result.predicted.append((t, replica, data["id"], data["value"]))
        result.msg_count = dict(self.net.msg_count)
        result.msg_bytes = dict(self.net.msg_bytes)
        return result


def run_simulation(cfg: ExperimentConfig) -> RunResult:
    return Cluster(cfg).run()


def run_experiment(cfg: ExperimentConfig):
    """Run one seeded experiment: returns (MetricsReport, [Verdict], RunResult)."""
    result = run_simulation(cfg)
    final_order = result.final_order()
    oracle_responses = None
    if final_order:
        _, oracle_responses = oracle_execute(
            [result.programs[rid] for rid in final_order], warehouses=cfg.warehouses)
    report = extract_metrics(result, final_order, oracle_responses)
    verdicts: list[Verdict] = []
    names = _check_names(cfg.checks)
    if names:
        if not result.quiesced:
            verdicts.append(Verdict("quiescence", False, seed=cfg.seed,
                                    detail="run hit the virtual-time cap"))
        inp = build_checker_input(result)
        verdicts.extend(run_checks(inp, names))
    return report, verdicts, result


def _check_names(spec: str) -> list[str]:
    if spec == "none" or not spec:
        return []
    if spec == "all":
        return ["convergence", "linearizability", "prefix-agreement"]
    return [s.strip() for s in spec.split(",") if s.strip()]
