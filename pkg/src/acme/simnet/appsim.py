"""Synthetic lookup application: instances route keyed lookups over the prefix
substrate, with live-settable request rate and message-drop fraction.

Each host runs up to three instances. A lookup resolves a random key to its
deterministic owner and routes toward it hop by hop; completion means the
response returned before the timeout, and success means the resolved owner
agrees with the majority of concurrent lookups for the same key.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..ids import NodeId, node_id_from_name, surrogate_owner
from ..qtree import next_hop
from ..sensact import ActuatorResult, SensorServerCore, OK, ERROR
from .harness import SimCluster, VirtualNode
from .topology import derive_seed

APP_BASE_PORT = 9100
MAX_INSTANCES_PER_HOST = 3
LOOKUP_TIMEOUT_MS = 10_000.0
DEFAULT_PERIOD_MS = 10_000.0


@dataclass
class LookupRecord:
    issued_ms: float
    key: str
    origin: str
    owner: str
    completed: bool
    latency_ms: float


@dataclass
class AppInstance:
    name: str
    nid: NodeId
    node: VirtualNode
    port: int
    alive: bool = True
    period_ms: float = DEFAULT_PERIOD_MS
    drop_fraction: float = 0.0
    msgs_routed: int = 0
    lookups_issued: int = 0
    busy_until: float = 0.0
    core: SensorServerCore = None
    workload_rng: random.Random = None
    drop_rng: random.Random = None


class AppManager:
    """Places, starts, kills, and drives application instances on the cluster."""

    def __init__(self, cluster: SimCluster, seed: int,
                 service_ms: float = 100.0, workload_enabled: bool = True):
        self.cluster = cluster
        self.seed = seed
        self.service_ms = service_ms
        self.workload_enabled = workload_enabled
        self.instances: dict[str, AppInstance] = {}
        self.lookups: list[LookupRecord] = []
        self._counter = 0
        self._host_slots: dict[str, int] = {}
        self._node_cycle = list(cluster.nodes)
        self._cycle_pos = 0
        self._members_cache: Optional[list] = None
        self.start_events: list[float] = []
        self.kill_events: list[float] = []

    # -- placement and lifecycle

    def _next_slot(self) -> tuple[VirtualNode, int]:
        for _ in range(len(self._node_cycle) * MAX_INSTANCES_PER_HOST):
            node = self._node_cycle[self._cycle_pos % len(self._node_cycle)]
            self._cycle_pos += 1
            used = self._host_slots.get(node.name, 0)
            if used < MAX_INSTANCES_PER_HOST:
                self._host_slots[node.name] = used + 1
                return node, APP_BASE_PORT + used
        raise RuntimeError("no free instance slots on any host")

    def start(self, count: int, lifetime_ms: Optional[float] = None) -> list[str]:
        started = []
        for _ in range(count):
            self._counter += 1
            name = f"app-{self._counter:04d}"
            node, port = self._next_slot()
            inst = AppInstance(
                name=name,
                nid=node_id_from_name(name),
                node=node,
                port=port,
                workload_rng=random.Random(derive_seed(self.seed, "workload", name)),
                drop_rng=random.Random(derive_seed(self.seed, "appdrop", name)),
            )
            inst.core = self._make_core(inst)
            self.cluster.register_port(node, port, inst.core)
            self.instances[name] = inst
            started.append(name)
            self.start_events.append(self.cluster.clock.now_ms())
            if lifetime_ms is not None:
                self.cluster.clock.call_later(lifetime_ms, lambda n=name: self.kill(n))
            if self.workload_enabled:
                self._schedule_lookup(inst, first=True)
        self._members_cache = None
        return started

    def kill(self, target: str) -> bool:
        inst = self.instances.get(target)
        if inst is None or not inst.alive:
            return False
        inst.alive = False
        self._host_slots[inst.node.name] -= 1
        self.kill_events.append(self.cluster.clock.now_ms())
        self._members_cache = None
        return True

    def reboot(self, target: str) -> bool:
        inst = self.instances.get(target)
        if inst is None:
            return False
        inst.alive = True
        self._members_cache = None
        return True

    def census(self) -> list[str]:
        return sorted(n for n, inst in self.instances.items() if inst.alive)

    def set_rate_all(self, period_ms: float) -> None:
        for inst in self.instances.values():
            inst.period_ms = period_ms

    def set_drop_all(self, fraction: float) -> None:
        for inst in self.instances.values():
            inst.drop_fraction = fraction

    # -- per-instance sensor server

    def _make_core(self, inst: AppInstance) -> SensorServerCore:
        core = SensorServerCore(f"{inst.node.name}/{inst.name}")
        core.register("msgcount", lambda args: f"{inst.msgs_routed}\n")
        core.register("lookups", lambda args: f"{inst.lookups_issued}\n")

        def set_loss(args):
            try:
                fraction = float(args["fraction"])
            except (KeyError, ValueError):
                return ActuatorResult(ERROR, "fraction required").to_csv()
            if not 0.0 <= fraction <= 1.0:
                return ActuatorResult(ERROR, f"fraction {fraction} out of range").to_csv()
            inst.drop_fraction = fraction
            return ActuatorResult(OK, f"drop fraction {fraction}").to_csv()

        def set_rate(args):
            try:
                period = float(args["period_ms"])
            except (KeyError, ValueError):
                return ActuatorResult(ERROR, "period_ms required").to_csv()
            if period <= 0:
                return ActuatorResult(ERROR, f"period {period} out of range").to_csv()
            inst.period_ms = period
            return ActuatorResult(OK, f"workload period {period}").to_csv()

        core.register("set_loss", set_loss)
        core.register("set_workload_rate", set_rate)
        return core

    # -- workload

    def _members(self) -> list[tuple[NodeId, AppInstance]]:
        if self._members_cache is None:
            live = [(inst.nid, inst) for inst in self.instances.values() if inst.alive]
            live.sort(key=lambda pair: pair[0])
            self._members_cache = live
        return self._members_cache

    def _schedule_lookup(self, inst: AppInstance, first: bool = False) -> None:
        if not inst.alive:
            return
        # instances start phase-staggered so the offered load is smooth
        delay = inst.workload_rng.uniform(0, inst.period_ms) if first \
            else inst.period_ms
        self.cluster.clock.call_later(delay, lambda: self._issue_lookup(inst))

    def _issue_lookup(self, inst: AppInstance) -> None:
        if not inst.alive:
            return
        self._schedule_lookup(inst)
        members = self._members()
        if len(members) < 2:
            return
        inst.lookups_issued += 1
        key = NodeId(tuple(inst.workload_rng.randrange(4) for _ in range(len(inst.nid))))
        ids = [nid for nid, _ in members]
        owner_id = surrogate_owner(key, ids)
        owner = dict(members)[owner_id]
        record = LookupRecord(self.cluster.clock.now_ms(), str(key), inst.name,
                              owner.name, False, 0.0)
        self.lookups.append(record)
        self._route(inst, inst, owner, key, record, hops=0)

    def _route(self, origin: AppInstance, cur: AppInstance, owner: AppInstance,
               key: NodeId, record: LookupRecord, hops: int) -> None:
        now = self.cluster.clock.now_ms()
        if now - record.issued_ms > LOOKUP_TIMEOUT_MS or hops > 2 * len(key):
            return
        if cur is owner:
            self._respond(owner, origin, record)
            return
        members = self._members()
        ids = [nid for nid, _ in members]
        if cur.nid not in ids or owner.nid not in ids:
            return  # membership shifted under the lookup
        nxt_id = next_hop(cur.nid, owner.nid, ids, self._latency)
        nxt = dict(members)[nxt_id]
        self._transmit(cur, nxt, record,
                       lambda: self._route(origin, nxt, owner, key, record, hops + 1))

    def _respond(self, owner: AppInstance, origin: AppInstance,
                 record: LookupRecord) -> None:
        def arrived():
            record.completed = True
            record.latency_ms = self.cluster.clock.now_ms() - record.issued_ms

        self._transmit(owner, origin, record, arrived)

    def _transmit(self, src: AppInstance, dst: AppInstance, record: LookupRecord,
                  then: Callable[[], None]) -> None:
        if src.drop_rng.random() < src.drop_fraction:
            return  # dropped on send
        src.msgs_routed += 1
        size = self.cluster.params.message_bytes_per_unit \
            + self.cluster.params.wire_overhead_bytes

        def delivered():
            if not dst.alive:
                return
            start = max(self.cluster.clock.now_ms(), dst.busy_until)
            dst.busy_until = start + self.service_ms
            self.cluster.clock.call_at(dst.busy_until, then)

        self.cluster.network.deliver(size, src.node.host, dst.node.host, delivered)

    def _latency(self, a: NodeId, b: NodeId) -> float:
        members = dict(self._members())
        return self.cluster.topology.one_way_latency_ms(
            members[a].node.host, members[b].node.host)

    # -- metrics

    def metrics(self, window_ms: float = 60_000.0,
                up_to_ms: Optional[float] = None) -> list[dict]:
        """Per-window completion rate, success rate, and mean latency."""
        horizon = up_to_ms if up_to_ms is not None else self.cluster.clock.now_ms()
        cutoff = horizon - LOOKUP_TIMEOUT_MS  # younger lookups may still complete
        done = [r for r in self.lookups if r.issued_ms <= cutoff]
        by_window: dict[int, list[LookupRecord]] = {}
        for r in done:
            by_window.setdefault(int(r.issued_ms // window_ms), []).append(r)
        out = []
        for w in sorted(by_window):
            records = by_window[w]
            majority: dict[str, str] = {}
            for key in {r.key for r in records}:
                owners = [r.owner for r in records if r.key == key]
                majority[key] = max(set(owners), key=owners.count)
            completed = [r for r in records if r.completed]
            successes = [r for r in completed if r.owner == majority[r.key]]
            out.append({
                "window": w,
                "lookups": len(records),
                "completion_rate": len(completed) / len(records) if records else 0.0,
                "success_rate": len(successes) / len(completed) if completed else 0.0,
                "mean_latency_ms": (sum(r.latency_ms for r in completed) / len(completed))
                                   if completed else 0.0,
            })
        return out
