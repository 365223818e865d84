"""Shared mini-harness: bare broadcast nodes on the simulation kernel, with
per-node delivery logs. Used by the broadcast unit tests and the randomized
total-order property suite."""

from creeksim.broadcast import BroadcastNode
from creeksim.sim import MSG_ARRIVAL, TIMER, Kernel, Network


class Harness:
    def __init__(self, n=5, seed=1, horizon=2000.0, latency=(0.2, 0.3)):
        self.kernel = Kernel(seed)
        self.net = Network(self.kernel, n, *latency)
        self.n = n
        self.horizon = horizon
        self.nodes: dict[int, BroadcastNode] = {}
        self.rb_log: dict[int, list] = {i: [] for i in range(1, n + 1)}
        self.cab_log: dict[int, list] = {i: [] for i in range(1, n + 1)}
        self.bodies: dict[int, set] = {i: set() for i in range(1, n + 1)}
        self.rb_times: dict[int, dict] = {i: {} for i in range(1, n + 1)}
        self.predicate_calls: dict[int, int] = {i: 0 for i in range(1, n + 1)}
        self.cast_pred: dict = {}
        self.pred_true_at_delivery = True
        for i in range(1, n + 1):
            node = BroadcastNode(i, n, self.kernel, self.net, self.kernel.trace)
            node.timers_enabled = lambda: self.kernel.now < self.horizon
            node.register_rb_handler("body", self._rb_handler(i))
            node.register_predicate("always", self._always(i), lambda m: m)
            node.register_predicate("have", self._have(i), lambda m: m)
            node.on_cab_deliver = self._cab_handler(i)
            self.nodes[i] = node
            self.kernel.register(i, self._node_handler(node))
            node.start_timers()

    def _node_handler(self, node):
        def handle(kind, payload):
            if kind == MSG_ARRIVAL:
                node.handle_message(payload[0], payload[1], payload[2])
            elif kind == TIMER:
                node.handle_timer(payload[0])
        return handle

    def _rb_handler(self, i):
        def on_rb(payload):
            self.rb_log[i].append(payload[1])
            self.bodies[i].add(payload[1])
            self.rb_times[i].setdefault(payload[1], self.kernel.now)
        return on_rb

    def _always(self, i):
        def pred(m):
            self.predicate_calls[i] += 1
            return True
        return pred

    def _have(self, i):
        def pred(m):
            self.predicate_calls[i] += 1
            return m in self.bodies[i]
        return pred

    def _cab_handler(self, i):
        def on_cab(m):
            if self.cast_pred.get(m) == "have" and m not in self.bodies[i]:
                self.pred_true_at_delivery = False
            self.cab_log[i].append((self.kernel.now, m))
        return on_cab

    def cast(self, src: int, m, pred: str = "have", with_body: bool = True) -> None:
        if with_body:
            self.nodes[src].rb_cast(("body", m), 64)
        self.cast_pred[m] = pred
        self.nodes[src].cab_cast(m, pred)

    def run(self, until=None):
        self.kernel.run(until=until if until is not None else self.horizon)

    def alive(self):
        return [i for i in self.nodes if not self.kernel.crashed(i)]

    def delivered_ids(self, i):
        return [m for _, m in self.cab_log[i]]


def prefix_comparable(a, b):
    short = min(len(a), len(b))
    return a[:short] == b[:short]
