"""Experiment configuration: flat key=value files with section prefixes,
echoed verbatim into every output."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .sim import ConfigError
from .workload import DEFAULT_MIX, WorkloadProfile

SYSTEMS = ("creek", "smr", "bayou", "archie")
ENGINES = ("reference", "multiversion")


@dataclass(frozen=True)
class ExperimentConfig:
    system: str = "creek"
    replicas: int = 5
    seed: int = 1
    engine: str = "multiversion"
    duration_cap_ms: float = 0.0  # 0 => derived from the workload
    trace_verbose: bool = False

    latency_low_ms: float = 0.2
    latency_high_ms: float = 0.3
    partitions: tuple = ()  # ((from, to, ((ids...), (ids...))), ...)
    crashes: tuple = ()     # ((replica, t_ms), ...)
    anti_entropy_ms: float = 50.0

    skew_ms: float = 1.0
    heartbeat_ms: float = 25.0
    leader_timeout_ms: float = 100.0

    slots: int = 16
    rollback_ms: float = 0.02

    warehouses: int = 5
    arrival_rate_tps: float = 4000.0
    ops: int = 500
    mix: tuple = DEFAULT_MIX
    strong_fraction: float | None = None
    service_weak_ms: float = 0.5
    service_payment_ms: float = 0.1
    service_multiplier: float = 1.0
    remote_order_prob: float = 0.1

    read_only_shortcut: bool = True
    noop_flush_ms: float = 0.0

    checks: str = "all"
    out: str = ""

    def validate(self) -> None:
        if self.system not in SYSTEMS:
            raise ConfigError(f"system must be one of {SYSTEMS}, got {self.system!r}")
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        if self.latency_low_ms > self.latency_high_ms:
            raise ConfigError("network.latency_low_ms must be <= latency_high_ms")
        self.workload_profile().validate()

    def workload_profile(self) -> WorkloadProfile:
        return WorkloadProfile(
            warehouses=self.warehouses,
            mix=self.mix,
            strong_fraction=self.strong_fraction,
            arrival_rate_tps=self.arrival_rate_tps,
            op_count=self.ops,
            service_weak_ms=self.service_weak_ms,
            service_payment_ms=self.service_payment_ms,
            service_multiplier=self.service_multiplier,
            remote_order_prob=self.remote_order_prob,
        )

    def cap_ms(self) -> float:
        if self.duration_cap_ms > 0:
            return self.duration_cap_ms
        horizon = self.ops / max(self.arrival_rate_tps, 1.0) * 1000.0
        if self.partitions:
            horizon = max(horizon, max(t_to for _, t_to, _ in self.partitions))
        return horizon + 5000.0

    def echo_lines(self) -> list[str]:
        out = []
        for key in sorted(_KEYMAP):
            out.append(f"{key}={_format_value(getattr(self, _KEYMAP[key]))}")
        return out


_KEYMAP = {
    "system": "system",
    "replicas": "replicas",
    "seed": "seed",
    "engine": "engine",
    "duration_cap_ms": "duration_cap_ms",
    "trace.verbose": "trace_verbose",
    "network.latency_low_ms": "latency_low_ms",
    "network.latency_high_ms": "latency_high_ms",
    "network.partitions": "partitions",
    "network.crashes": "crashes",
    "network.anti_entropy_ms": "anti_entropy_ms",
    "clock.skew_ms": "skew_ms",
    "consensus.heartbeat_ms": "heartbeat_ms",
    "consensus.leader_timeout_ms": "leader_timeout_ms",
    "exec.slots": "slots",
    "exec.rollback_ms": "rollback_ms",
    "workload.warehouses": "warehouses",
    "workload.arrival_rate_tps": "arrival_rate_tps",
    "workload.ops": "ops",
    "workload.mix": "mix",
    "workload.strong_fraction": "strong_fraction",
    "workload.service_weak_ms": "service_weak_ms",
    "workload.service_payment_ms": "service_payment_ms",
    "workload.service_multiplier": "service_multiplier",
    "workload.remote_order_prob": "remote_order_prob",
    "flags.read_only_shortcut": "read_only_shortcut",
    "flags.noop_flush_ms": "noop_flush_ms",
    "checks": "checks",
    "out": "out",
}

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, tuple):
        if not value:
            return ""
        if isinstance(value[0], tuple) and len(value[0]) == 3:  # partitions
            return ";".join(
                f"{f:g}:{t:g}:" + "|".join(",".join(str(r) for r in g) for g in groups)
                for f, t, groups in value
            )
        if isinstance(value[0][0], str):  # mix
            return ",".join(f"{t}:{p:g}" for t, p in value)
        return ",".join(f"{r}@{t:g}" for r, t in value)  # crashes
    return f"{value:g}" if isinstance(value, float) else str(value)


def _parse_partitions(text: str) -> tuple:
    out = []
    for part in filter(None, (p.strip() for p in text.split(";"))):
        f, t, groups = part.split(":")
        parsed = tuple(tuple(int(r) for r in g.split(",")) for g in groups.split("|"))
        out.append((float(f), float(t), parsed))
    return tuple(out)


def _parse_crashes(text: str) -> tuple:
    out = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        r, t = part.split("@")
        out.append((int(r), float(t)))
    return tuple(out)


def _parse_mix(text: str) -> tuple:
    out = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        t, p = part.split(":")
        out.append((t, float(p)))
    return tuple(out)


def _coerce(attr: str, raw: str):
    raw = raw.strip()
    if attr == "partitions":
        return _parse_partitions(raw)
    if attr == "crashes":
        return _parse_crashes(raw)
    if attr == "mix":
        return _parse_mix(raw) if raw else DEFAULT_MIX
    if attr == "strong_fraction":
        return float(raw) if raw else None
    if attr in ("system", "engine", "checks", "out"):
        return raw
    if attr in ("trace_verbose", "read_only_shortcut"):
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off", ""):
            return False
        raise ConfigError(f"bad boolean {raw!r} for {attr}")
    if attr in ("replicas", "seed", "slots", "ops", "warehouses"):
        return int(raw)
    return float(raw)


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base if base is not None else ExperimentConfig()
    updates = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        attr = _KEYMAP.get(key)
        if attr is None:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            updates[attr] = _coerce(attr, raw)
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return replace(cfg, **updates)


def load_config(path: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base)
