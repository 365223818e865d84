"""Metric extraction and report emission: on-replica latency percentiles,
throughput, speculation accuracy, execution ratio, slot utilization and
message accounting."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

from .workload import oracle_execute

CSV_HEADER = "system,seed,load,kind,p50_ms,p95_ms,p99_ms,throughput_tps,accuracy,exec_ratio"

KINDS = ("tentative-weak", "tentative-strong", "stable-strong", "stable-weak")


def percentile(sorted_vals: list[float], q: float) -> float:
    """Nearest-rank percentile over an ascending list."""
    if not sorted_vals:
        return 0.0
    idx = min(len(sorted_vals) - 1, max(0, math.ceil(q * len(sorted_vals)) - 1))
    return sorted_vals[idx]


@dataclass
class MetricsReport:
    system: str
    seed: int
    offered_load: float
    achieved_tps: float = 0.0
    kind_stats: dict = field(default_factory=dict)  # kind -> {count,p50,p95,p99,mean}
    accuracy: float = 1.0
    exec_ratio: float = 1.0
    slot_utilization: float = 0.0
    msg_count: dict = field(default_factory=dict)
    msg_bytes: dict = field(default_factory=dict)
    config_echo: list = field(default_factory=list)

    def csv_rows(self) -> list[str]:
        rows = []
        for kind in KINDS + ("predicted-tentative",):
            stats = self.kind_stats.get(kind)
            if not stats:
                continue
            rows.append(
                f"{self.system},{self.seed},{self.offered_load:g},{kind},"
                f"{stats['p50']:.6f},{stats['p95']:.6f},{stats['p99']:.6f},"
                f"{self.achieved_tps:.3f},{self.accuracy:.6f},{self.exec_ratio:.6f}"
            )
        return rows


def _latency_stats(latencies: list[float]) -> dict:
    vals = sorted(latencies)
    return {
        "count": len(vals),
        "p50": percentile(vals, 0.50),
        "p95": percentile(vals, 0.95),
        "p99": percentile(vals, 0.99),
        "mean": sum(vals) / len(vals) if vals else 0.0,
    }


def final_response_kind(system: str, strong: bool) -> str:
    if system in ("smr", "archie"):
        return "stable"
    if system == "bayou":
        return "tentative"
    return "stable" if strong else "tentative"


def extract_metrics(result, final_order=None, oracle_responses=None) -> MetricsReport:
    cfg = result.config
    rep = MetricsReport(system=cfg.system, seed=cfg.seed,
                        offered_load=cfg.arrival_rate_tps,
                        config_echo=cfg.echo_lines())
    invokes = result.invokes  # rid -> (t, replica, type, strong, ro)
    latencies: dict[str, list[float]] = {}
    first_resp: dict = {}
    final_t = []
    counted: set = set()
    for t, replica, rid, kind, value, strong in result.responses:
        inv = invokes.get(rid)
        if inv is None:
            continue
        lat = t - inv[0]
        label = f"{kind}-{'strong' if strong else 'weak'}"
        latencies.setdefault(label, []).append(lat)
        if rid not in first_resp:
            first_resp[rid] = value
        if rid not in counted and kind == final_response_kind(cfg.system, bool(strong)):
            counted.add(rid)
            final_t.append(t)
    for t, replica, rid, value in result.predicted:
        inv = invokes.get(rid)
        if inv is None:
            continue
        latencies.setdefault("predicted-tentative", []).append(t - inv[0])
        if rid not in first_resp:
            first_resp[rid] = value

    rep.kind_stats = {k: _latency_stats(v) for k, v in sorted(latencies.items())}

    if counted and final_t:
        t0 = min(t for t, *_ in invokes.values())
        t1 = max(final_t)
        if t1 > t0:
            rep.achieved_tps = len(counted) / (t1 - t0) * 1000.0

    # speculation accuracy: first recorded execution response vs the response
    # from sequentially replaying the final order
    if final_order:
        if oracle_responses is None:
            _, oracle_responses = oracle_execute(
                [result.programs[rid] for rid in final_order], warehouses=cfg.warehouses)
        matched = total = 0
        for at, rid in enumerate(final_order):
            resp = first_resp.get(rid, result.stable_values.get(rid))
            if resp is None:
                continue
            total += 1
            if resp == oracle_responses[at]:
                matched += 1
        rep.accuracy = matched / total if total else 1.0

    # execution ratio: executions performed per distinct transaction, per replica
    execs = 0
    distinct: set = set()
    for t, replica, kind, data in result.trace.records:
        if kind == "exec":
            execs += 1
            distinct.add((replica, data["id"]))
    rep.exec_ratio = execs / len(distinct) if distinct else 1.0

    # slot utilization over the active window
    busy = sum(st["busy_ms"] for st in result.exec_stats.values())
    slots = sum(st["slots"] for st in result.exec_stats.values())
    if final_t and slots:
        span = max(final_t) - min(t for t, *_ in invokes.values())
        if span > 0:
            rep.slot_utilization = busy / (slots * span)

    rep.msg_count = dict(sorted(result.msg_count.items()))
    rep.msg_bytes = dict(sorted(result.msg_bytes.items()))
    return rep


def emit_report(reports: list[MetricsReport], out_dir: str) -> list[str]:
    """Write the CSV table and per-metric plot-data files; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    csv_path = os.path.join(out_dir, "report.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(CSV_HEADER + "\n")
        for rep in reports:
            for row in rep.csv_rows():
                fh.write(row + "\n")
    paths.append(csv_path)

    def dat(name: str, header: str, rows: list[str]) -> None:
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# " + header + "\n")
            for row in rows:
                fh.write(row + "\n")
        paths.append(path)

    lat_rows, acc_rows, ratio_rows = [], [], []
    for rep in reports:
        for kind in KINDS + ("predicted-tentative",):
            stats = rep.kind_stats.get(kind)
            if stats:
                lat_rows.append(
                    f"{rep.system} {rep.achieved_tps:.3f} {kind} "
                    f"{stats['p50']:.6f} {stats['p95']:.6f} {stats['p99']:.6f}"
                )
        acc_rows.append(f"{rep.system} {rep.achieved_tps:.3f} {rep.accuracy:.6f}")
        ratio_rows.append(f"{rep.system} {rep.achieved_tps:.3f} {rep.exec_ratio:.6f}")
    dat("latency.dat", "system throughput_tps kind p50_ms p95_ms p99_ms", lat_rows)
    dat("accuracy.dat", "system throughput_tps accuracy", acc_rows)
    dat("exec_ratio.dat", "system throughput_tps exec_ratio", ratio_rows)

    echo_path = os.path.join(out_dir, "config.echo")
    with open(echo_path, "w", encoding="utf-8") as fh:
        for rep in reports:
            for line in rep.config_echo:
                fh.write(line + "\n")
            fh.write("\n")
    paths.append(echo_path)
    return paths
