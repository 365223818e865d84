"""TPC-C-lite: five transaction types over a keyed record store, with the
standard mix, warehouse-count-controlled contention, and Payment marked strong.

Programs are pure: identical (params, read values) always produce identical
writes and response. Money is integer cents; discounts are basis points.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Callable

NEW_ORDER = "new_order"
PAYMENT = "payment"
DELIVERY = "delivery"
ORDER_STATUS = "order_status"
STOCK_LEVEL = "stock_level"
NOOP = "noop"
SCRIPT = "script"  # generic read/write step list; not part of any mix

READ_ONLY_TYPES = frozenset({ORDER_STATUS, STOCK_LEVEL})

DEFAULT_MIX = (
    (NEW_ORDER, 0.45),
    (PAYMENT, 0.43),
    (DELIVERY, 0.04),
    (ORDER_STATUS, 0.04),
    (STOCK_LEVEL, 0.04),
)

DISTRICTS_PER_WAREHOUSE = 10
CUSTOMERS_PER_DISTRICT = 100
ITEM_COUNT = 1000

Program = tuple  # (type_tag, params tuple)


@dataclass(frozen=True)
class WorkloadProfile:
    warehouses: int = 5
    mix: tuple = DEFAULT_MIX
    strong_fraction: float | None = None  # None => Payment-only strong
    arrival_rate_tps: float = 4000.0
    op_count: int = 500
    service_weak_ms: float = 0.5
    service_payment_ms: float = 0.1
    service_multiplier: float = 1.0
    remote_order_prob: float = 0.1

    def validate(self) -> None:
        total = sum(p for _, p in self.mix)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mix probabilities sum to {total}, expected 1")
        if self.warehouses < 1:
            raise ValueError("warehouses must be >= 1")


_STORE_CACHE: dict[int, dict] = {}


def initial_store(warehouses: int) -> dict:
    """Populated records for warehouses/districts/customers/items/stock."""
    if warehouses < 1:
        raise ValueError("warehouses must be >= 1")
    cached = _STORE_CACHE.get(warehouses)
    if cached is None:
        store: dict = {}
        for i in range(1, ITEM_COUNT + 1):
            store[("i_price", i)] = 100 + (i * 97) % 9900
        for w in range(1, warehouses + 1):
            store[("w_ytd", w)] = 0
            for d in range(1, DISTRICTS_PER_WAREHOUSE + 1):
                store[("d_ytd", w, d)] = 0
                store[("d_next_oid", w, d)] = 1
                store[("d_last_del", w, d)] = 0
                for c in range(1, CUSTOMERS_PER_DISTRICT + 1):
                    store[("c_bal", w, d, c)] = 100_000
                    store[("c_disc", w, d, c)] = ((c * 13 + d) % 50) * 10
            for i in range(1, ITEM_COUNT + 1):
                store[("stock", w, i)] = 50 + (w * 31 + i * 17) % 50
        cached = _STORE_CACHE[warehouses] = store
    return dict(cached)


def make_program(rng: random.Random, profile: WorkloadProfile) -> Program:
    tags = [t for t, _ in profile.mix]
    weights = [p for _, p in profile.mix]
    tag = rng.choices(tags, weights=weights, k=1)[0]
    w = rng.randint(1, profile.warehouses)
    d = rng.randint(1, DISTRICTS_PER_WAREHOUSE)
    c = rng.randint(1, CUSTOMERS_PER_DISTRICT)
    if tag == NEW_ORDER:
        lines = []
        for _ in range(rng.randint(5, 15)):
            item = rng.randint(1, ITEM_COUNT)
            supply_w = w
            if profile.warehouses > 1 and rng.random() < profile.remote_order_prob:
                supply_w = rng.randint(1, profile.warehouses)
            lines.append((item, supply_w, rng.randint(1, 10)))
        return (NEW_ORDER, (w, d, c, tuple(lines)))
    if tag == PAYMENT:
        return (PAYMENT, (w, d, c, rng.randint(100, 500_000)))
    if tag == DELIVERY:
        return (DELIVERY, (w, rng.randint(1, 10)))
    if tag == ORDER_STATUS:
        return (ORDER_STATUS, (w, d, c))
    probe = tuple(sorted(rng.sample(range(1, ITEM_COUNT + 1), 10)))
    return (STOCK_LEVEL, (w, d, rng.randint(55, 75), probe))


def is_read_only(prog: Program) -> bool:
    return prog[0] in READ_ONLY_TYPES


def is_strong(prog: Program, rng: random.Random, profile: WorkloadProfile) -> bool:
    if profile.strong_fraction is not None:
        return rng.random() < profile.strong_fraction
    return prog[0] == PAYMENT


def service_ms(prog: Program, profile: WorkloadProfile) -> float:
    if prog[0] == NOOP:
        return 0.01
    base = profile.service_payment_ms if prog[0] == PAYMENT else profile.service_weak_ms
    return base * profile.service_multiplier


@dataclass(frozen=True)
class Arrival:
    t: float
    replica: int
    prog: Program
    strong: bool


def generate_arrivals(seed_rng: random.Random, profile: WorkloadProfile,
                      n_replicas: int) -> list[Arrival]:
    """Exponential inter-arrivals, uniform target replica, type per mix."""
    profile.validate()
    out = []
    t = 0.0
    rate_per_ms = profile.arrival_rate_tps / 1000.0
    for _ in range(profile.op_count):
        t += seed_rng.expovariate(rate_per_ms)
        prog = make_program(seed_rng, profile)
        out.append(Arrival(t, seed_rng.randint(1, n_replicas), prog,
                           is_strong(prog, seed_rng, profile)))
    return out


def run_program(prog: Program, read: Callable, write: Callable):
    """Execute one program against read/write callbacks; returns the response."""
    tag, params = prog
    if tag == NEW_ORDER:
        w, d, c, lines = params
        oid = read(("d_next_oid", w, d))
        write(("d_next_oid", w, d), oid + 1)
        disc = read(("c_disc", w, d, c))
        total = 0
        for item, sw, qty in lines:
            price = read(("i_price", item))
            stock = read(("stock", sw, item))
            left = stock - qty
            if left < 10:
                left += 91
            write(("stock", sw, item), left)
            total += price * qty
        total = total * (10_000 - disc) // 10_000
        write(("order", w, d, oid), (c, len(lines), total))
        return ("oid", oid, total)
    if tag == PAYMENT:
        w, d, c, amount = params
        write(("w_ytd", w), read(("w_ytd", w)) + amount)
        write(("d_ytd", w, d), read(("d_ytd", w, d)) + amount)
        bal = read(("c_bal", w, d, c)) - amount
        write(("c_bal", w, d, c), bal)
        return ("bal", bal)
    if tag == DELIVERY:
        w, carrier = params
        delivered = []
        for d in range(1, DISTRICTS_PER_WAREHOUSE + 1):
            last = read(("d_last_del", w, d))
            nxt = read(("d_next_oid", w, d))
            if last + 1 < nxt:
                oid = last + 1
                write(("d_last_del", w, d), oid)
                order = read(("order", w, d, oid))
                if order is not None:
                    c, _nlines, total = order
                    write(("c_bal", w, d, c), read(("c_bal", w, d, c)) + total)
                    delivered.append((d, oid))
        return ("delivered", tuple(delivered), carrier)
    if tag == ORDER_STATUS:
        w, d, c = params
        bal = read(("c_bal", w, d, c))
        nxt = read(("d_next_oid", w, d))
        last_order = read(("order", w, d, nxt - 1)) if nxt > 1 else None
        return ("status", bal, nxt - 1, last_order)
    if tag == STOCK_LEVEL:
        w, d, threshold, probe = params
        low = sum(1 for item in probe if read(("stock", w, item)) < threshold)
        return ("low", low)
    if tag == NOOP:
        return ()
    if tag == SCRIPT:
        out = []
        for step in params:
            if step[0] == "r":
                out.append(read(step[1]))
            elif step[0] == "w":
                write(step[1], step[2])
            else:  # ("rmw", oid, delta): read-modify-write
                value = (read(step[1]) or 0) + step[2]
                write(step[1], value)
                out.append(value)
        return tuple(out)
    raise ValueError(f"unknown program type {tag}")


class _OracleCtx:
    __slots__ = ("store", "reads", "writes")

    def __init__(self, store: dict):
        self.store = store
        self.reads: set = set()
        self.writes: set = set()

    def read(self, oid):
        if oid not in self.writes:
            self.reads.add(oid)
        return self.store.get(oid)

    def write(self, oid, value):
        self.writes.add(oid)
        self.store[oid] = value


def oracle_execute(programs, store: dict | None = None, warehouses: int | None = None):
    """Strictly sequential ground-truth execution: (final store, responses)."""
    if store is None:
        store = initial_store(warehouses if warehouses is not None else 5)
    else:
        store = dict(store)
    responses = []
    for prog in programs:
        ctx = _OracleCtx(store)
        responses.append(run_program(prog, ctx.read, ctx.write))
    return store, responses


def access_sets(prog: Program, store: dict):
    """(readset, writeset) of one program against a store state (no mutation)."""
    ctx = _OracleCtx(dict(store))
    run_program(prog, ctx.read, ctx.write)
    return ctx.reads, ctx.writes
