"""Command-line entry point: run seeded experiments, write reports and
plot-data files, and exit nonzero when a consistency checker fails."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .config import ExperimentConfig, load_config
from .metrics import emit_report
from .runner import run_experiment
from .sim import ConfigError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="creeksim",
        description="Deterministic simulator for mixed-consistency replication "
                    "(creek) against smr, bayou and archie baselines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment or a load sweep")
    run.add_argument("--config", help="key=value config file")
    run.add_argument("--seed", type=int)
    run.add_argument("--system", choices=["creek", "smr", "bayou", "archie"])
    run.add_argument("--engine", choices=["reference", "multiversion"])
    run.add_argument("--out", help="output directory for report files")
    run.add_argument("--check", help="all | none | comma-separated checker names")
    run.add_argument("--sweep", help="load=a,b,c : offered-load sweep (tps)")
    run.add_argument("--ops", type=int, help="workload op-count budget")
    run.add_argument("--trace", action="store_true", help="write the event trace")
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    updates = {}
    for attr in ("seed", "system", "engine", "ops"):
        value = getattr(args, attr)
        if value is not None:
            updates[attr] = value
    if args.check is not None:
        updates["checks"] = args.check
    if args.out is not None:
        updates["out"] = args.out
    return replace(cfg, **updates)


def _sweep_loads(spec: str) -> list[float]:
    key, _, values = spec.partition("=")
    if key.strip() != "load" or not values:
        raise ConfigError(f"--sweep expects load=a,b,c, got {spec!r}")
    return [float(v) for v in values.split(",")]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig()
        if args.config:
            cfg = load_config(args.config, cfg)
        cfg = _apply_overrides(cfg, args)
        cfg.validate()
        loads = _sweep_loads(args.sweep) if args.sweep else [cfg.arrival_rate_tps]
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    reports = []
    all_verdicts = []
    traces = []
    for load in loads:
        run_cfg = replace(cfg, arrival_rate_tps=load)
        report, verdicts, result = run_experiment(run_cfg)
        reports.append(report)
        all_verdicts.extend(verdicts)
        traces.append((load, result.trace))
        for kind in sorted(report.kind_stats):
            stats = report.kind_stats[kind]
            print(f"{run_cfg.system} seed={run_cfg.seed} load={load:g} {kind}: "
                  f"p50={stats['p50']:.3f}ms p95={stats['p95']:.3f}ms n={stats['count']}")
        print(f"{run_cfg.system} seed={run_cfg.seed} load={load:g} "
              f"throughput={report.achieved_tps:.1f}tps accuracy={report.accuracy:.4f} "
              f"exec_ratio={report.exec_ratio:.4f}")
        for v in verdicts:
            print(v)

    if cfg.out:
        try:
            paths = emit_report(reports, cfg.out)
            if args.trace:
                for load, trace in traces:
                    path = os.path.join(cfg.out, f"trace-load{load:g}.txt")
                    with open(path, "w", encoding="utf-8") as fh:
                        fh.write(trace.text())
                    paths.append(path)
        except OSError as exc:
            print(f"error: cannot write outputs: {exc}", file=sys.stderr)
            return 2
        for path in paths:
            print(f"wrote {path}")

    return 0 if all(v.passed for v in all_verdicts) else 1


if __name__ == "__main__":
    sys.exit(main())
