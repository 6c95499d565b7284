"""Virtual-node cluster: wires query engines, sensor hosts, and the simulated
network together under one deterministic clock.

Every virtual node owns an engine, a sensor server core, and an actuator
ledger; the cluster builds spanning trees over the membership, dispatches
frames, and models local sensor fetches as calls with a per-sensor service
latency. All node logic is the same code the live runtime uses; only the
environment differs.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from ..aggregate import PartialAggregate, ResultTuple, LIST_OPS
from ..ids import NodeId, distinct_ids
from ..ising import EngineConfig, IsingEngine, TreeView
from ..qtree import DIR_UP, TreeHandle, TreeKind, TreeStructure, build_tree
from ..query import SensorQuery
from ..sensact import (ActuatorLedger, CounterBank, SensorServerCore,
                       ValueStore, make_hostname_sensor, make_load_sensor,
                       register_value_actuator, split_sensor_name)
from .events import SimClock
from .network import SimNetwork, SimParams
from .topology import SimTopology, TopologyParams, derive_seed, generate_topology

SENSOR_PORT = 9000

# Anticipated tree depth for timeout budgeting sits above the true depth:
# the per-level timeout unit must also absorb broadcast serialization, which
# at fan-ins of several hundred exceeds a single per-hop latency allowance.
TIMEOUT_SLACK_LEVELS = 3


@dataclass
class VirtualNode:
    index: int
    name: str
    nid: NodeId
    host: str
    core: SensorServerCore
    ledger: ActuatorLedger
    values: ValueStore
    counters: CounterBank
    engine: IsingEngine = None
    alive: bool = True


class _SimEnv:
    """NodeEnv implementation backed by the cluster's clock and network."""

    def __init__(self, cluster: "SimCluster", node: VirtualNode):
        self.cluster = cluster
        self.node = node
        self.hostname = node.name

    def now_ms(self) -> float:
        return self.cluster.clock.now_ms()

    def call_later(self, delay_ms, fn):
        node = self.node
        return self.cluster.clock.call_later(
            delay_ms, lambda: fn() if node.alive else None)

    def cancel(self, handle):
        self.cluster.clock.cancel(handle)

    def send(self, dst, tree_id, direction, payload, units):
        self.cluster.send(self.node, dst, tree_id, direction, payload, units)

    def fetch_group(self, requests, cb):
        self.cluster.fetch_group(self.node, requests, cb)

    def fetch_remote(self, host, port, sensor, cb):
        self.cluster.fetch_remote(self.node, host, port, sensor, cb)

    def merge_tail_ms(self, view: TreeView, partial: PartialAggregate) -> float:
        p = self.cluster.params
        if view.parent is None:
            return p.compute_flat_ms + p.root_finalize_per_value_ms * partial.value_units()
        if not view.children:
            return p.compute_flat_ms
        if partial.op in LIST_OPS:
            return p.compute_per_value_ms * partial.value_units()
        return p.compute_flat_ms


@dataclass
class QueryOutcome:
    query_id: int
    rows: list
    partial: PartialAggregate
    latency_ms: float
    up_bytes: int
    response_bytes: int

    @property
    def total_app_bytes(self) -> int:
        return self.up_bytes + self.response_bytes


class SimCluster:
    """A population of virtual nodes over one simulated topology."""

    def __init__(self, seed: int, n_nodes: int,
                 topo_params: Optional[TopologyParams] = None,
                 params: Optional[SimParams] = None,
                 engine_config: Optional[EngineConfig] = None,
                 name_salt: str = "",
                 topology: Optional[SimTopology] = None,
                 tree_cache: Optional[dict] = None):
        self.seed = seed
        self.clock = SimClock()
        self.params = params or SimParams()
        self.engine_config = engine_config or EngineConfig()
        if topology is None:
            tp = topo_params or TopologyParams(min_hosts=max(n_nodes, 16))
            if tp.min_hosts < n_nodes:
                tp.min_hosts = n_nodes
            topology = generate_topology(seed, tp)
        self.topology = topology
        self.network = SimNetwork(self.clock, topology, seed, self.params)
        self.tree_cache = tree_cache if tree_cache is not None else {}

        names = [f"node{name_salt}-{i:03d}" for i in range(n_nodes)]
        ids = distinct_ids(names)
        host_order = list(topology.hosts)
        random.Random(derive_seed(seed, "placement")).shuffle(host_order)
        self.nodes: list[VirtualNode] = []
        self.by_id: dict[NodeId, VirtualNode] = {}
        self.by_name: dict[str, VirtualNode] = {}
        for i, name in enumerate(names):
            node = self._make_node(i, name, ids[name], host_order[i])
            self.nodes.append(node)
            self.by_id[node.nid] = node
            self.by_name[name] = node
        self.root = self.nodes[0]

        self._tree_counter = 0
        self.trees: dict[int, TreeStructure] = {}
        self.load_script: Callable[[VirtualNode, float], float] = lambda node, now: 0.0
        self.sensor_service_override: Optional[Callable] = None
        self.up_delay_hook: Optional[Callable] = None  # (src, dst, payload) -> extra ms
        self.app_up_bytes = 0
        self.fetch_ports: dict[str, dict[int, SensorServerCore]] = {}

    def _make_node(self, index, name, nid, host) -> VirtualNode:
        core = SensorServerCore(name)
        ledger = ActuatorLedger()
        values = ValueStore()
        counters = CounterBank()
        node = VirtualNode(index, name, nid, host, core, ledger, values, counters)
        core.register("internal", lambda args, i=index: f"{i}\n")
        core.register("hostname", make_hostname_sensor(name))
        core.register("load", make_load_sensor(
            lambda n=node: float(self.load_script(n, self.clock.now_ms()))))
        core.register("counter", counters.handler)
        core.register("value", values.sensor)
        register_value_actuator(core, values, ledger, self.clock.now_ms)

        def reboot(args):
            from .. import sensact
            result = sensact.ActuatorResult(sensact.OK, f"rebooted {name}")
            ledger.record(int(self.clock.now_ms()), "reboot", args, result)
            return result.to_csv()

        core.register("reboot", reboot)
        node.engine = IsingEngine(nid, _SimEnv(self, node), self.engine_config)
        return node

    # -- sensor plumbing ------------------------------------------------------

    def register_port(self, node: VirtualNode, port: int, core: SensorServerCore) -> None:
        """Expose an extra local sensor server (application instances)."""
        self.fetch_ports.setdefault(node.name, {})[port] = core

    def _resolve_core(self, node: VirtualNode, port: int) -> Optional[SensorServerCore]:
        if port == SENSOR_PORT:
            return node.core
        return self.fetch_ports.get(node.name, {}).get(port)

    def sensor_service_ms(self, node: VirtualNode, port: int, sensor: str) -> float:
        if self.sensor_service_override is not None:
            override = self.sensor_service_override(node, port, sensor)
            if override is not None:
                return override
        if sensor == "internal":
            return 0.0
        return self.params.sensor_service_ms

    def fetch_one(self, node: VirtualNode, port: int, sensor: str) -> Optional[str]:
        """Synchronous local fetch (service latency is the caller's concern)."""
        core = self._resolve_core(node, port)
        if core is None or not node.alive:
            return None
        name, args = split_sensor_name(sensor)
        status, text = core.serve(name, args)
        return text if status == 200 else None

    def fetch_group(self, node: VirtualNode, requests, cb) -> None:
        if not node.alive:
            return
        delay = 0.0
        for port, sensor in requests:
            name, _ = split_sensor_name(sensor)
            delay = max(delay, self.sensor_service_ms(node, port, name))

        def done():
            if not node.alive:
                return
            results = {}
            for port, sensor in requests:
                results[(port, sensor)] = self.fetch_one(node, port, sensor)
            cb(results)

        self.clock.call_later(delay, done)

    def fetch_remote(self, src: VirtualNode, host: str, port: int, sensor: str, cb):
        """Direct request to one node's sensor server, bypassing any tree."""
        target = self.by_name.get(host)
        if target is None or not target.alive:
            self.clock.call_later(1.0, lambda: cb(None))
            return
        size = self.params.message_bytes_per_unit + self.params.wire_overhead_bytes

        def respond():
            raw = self.fetch_one(target, port, sensor)
            service = self.sensor_service_ms(target, port, split_sensor_name(sensor)[0])
            self.clock.call_later(
                service,
                lambda: self.network.deliver(size, target.host, src.host,
                                             lambda: cb(raw)))

        self.network.deliver(size, src.host, target.host, respond)

    # -- transport -------------------------------------------------------------

    def send(self, src: VirtualNode, dst: NodeId, tree_id, direction, payload, units):
        if not src.alive:
            return
        if direction == DIR_UP and self.network.drop_up_message(src.name):
            return
        size = units * self.params.message_bytes_per_unit
        if direction == DIR_UP:
            self.app_up_bytes += size
        target = self.by_id.get(dst)
        if target is None:
            return
        extra = 0.0
        if self.up_delay_hook is not None and direction == DIR_UP:
            extra = self.up_delay_hook(src, target, payload) or 0.0
        # links carry framing/header overhead beyond the application bytes
        wire_size = size + self.params.wire_overhead_bytes

        def launch():
            self.network.deliver(
                wire_size, src.host, target.host,
                lambda: self.dispatch(target, src.nid, tree_id, direction, payload, units))

        if extra > 0:
            self.clock.call_later(extra, launch)
        else:
            launch()

    def dispatch(self, target: VirtualNode, src: NodeId, tree_id, direction,
                 payload, units):
        if target.alive:
            target.engine.on_message(src, tree_id, direction, payload, units)

    # -- trees -------------------------------------------------------------------

    def latency_between(self, a: NodeId, b: NodeId) -> float:
        return self.topology.one_way_latency_ms(self.by_id[a].host, self.by_id[b].host)

    def make_tree(self, kind: TreeKind, members: Optional[Sequence[VirtualNode]] = None,
                  root: Optional[VirtualNode] = None,
                  structure: Optional[TreeStructure] = None,
                  anticipated_depth: Optional[int] = None) -> TreeHandle:
        """Build (or adopt) a spanning tree and install per-node views."""
        members = list(members) if members is not None else list(self.nodes)
        root = root or members[0]
        if structure is None:
            fraction = self.params.route_view_fraction
            view_seed = derive_seed(self.seed, "routing-views")
            key = (kind, root.nid, fraction, view_seed,
                   tuple(sorted(n.nid for n in members)))
            structure = self.tree_cache.get(key)
            if structure is None:
                structure = build_tree([n.nid for n in members], root.nid, kind,
                                       self.latency_between,
                                       view_fraction=fraction, view_seed=view_seed)
                self.tree_cache[key] = structure
        self._tree_counter += 1
        tree_id = self._tree_counter
        self.trees[tree_id] = structure
        max_depth = anticipated_depth if anticipated_depth is not None \
            else structure.max_depth() + TIMEOUT_SLACK_LEVELS
        for node in members:
            view = TreeView(
                tree_id=tree_id, root=root.nid, me=node.nid,
                parent=structure.parent.get(node.nid),
                children=structure.children.get(node.nid, ()),
                depth=structure.depth[node.nid],
                max_depth=max_depth,
            )
            node.engine.install_tree(view)
        return TreeHandle(tree_id, root.nid)

    def install_structure(self, structure: TreeStructure) -> TreeHandle:
        """Adopt an explicitly constructed tree (tests build pathological shapes)."""
        root = self.by_id[structure.root]
        members = [self.by_id[nid] for nid in structure.members()]
        return self.make_tree(structure.kind, members, root, structure)

    # -- query driving -------------------------------------------------------------

    def issue_query(self, handle: TreeHandle, query: SensorQuery,
                    on_epoch: Optional[Callable] = None) -> dict:
        """Inject a user query at the root; returns a state dict updated per epoch."""
        state = {"done": False, "epochs": [], "t0": self.clock.now_ms(),
                 "up_bytes_at_start": self.app_up_bytes}
        root_engine = self.by_id[handle.root].engine

        def collect(qid, epoch, rows, partial):
            outcome = QueryOutcome(
                query_id=qid, rows=rows, partial=partial,
                latency_ms=self.clock.now_ms() - state["t0"],
                up_bytes=self.app_up_bytes - state["up_bytes_at_start"],
                response_bytes=len(rows) * self.params.message_bytes_per_unit,
            )
            state["epochs"].append(outcome)
            state["done"] = True
            if on_epoch is not None:
                on_epoch(outcome)

        state["query_id"] = root_engine.root_issue(handle.tree_id, query, collect)
        return state

    def run_snapshot(self, handle: TreeHandle, query: SensorQuery,
                     horizon_ms: float = 600_000.0) -> QueryOutcome:
        state = self.issue_query(handle, query)
        self.clock.run(until_ms=self.clock.now_ms() + horizon_ms,
                       stop=lambda: state["done"])
        if not state["epochs"]:
            raise RuntimeError("query did not complete within the horizon")
        return state["epochs"][0]

    def kill(self, node: VirtualNode) -> None:
        node.alive = False

    def restart(self, node: VirtualNode) -> None:
        node.alive = True
