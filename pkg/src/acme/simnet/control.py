"""Simulator-side clients for the trigger engine: continuous queries with
ordered root failover, actuator invocation, and process control."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from ..qtree import TreeHandle
from ..query import SensorQuery
from .harness import SimCluster, VirtualNode

FAILOVER_GRACE_FACTOR = 1.5


class _Subscription:
    def __init__(self, client: "SimQueryClient", roots: Sequence[str],
                 query: SensorQuery, on_block: Callable):
        self.client = client
        self.roots = list(roots)
        self.query = query
        self.on_block = on_block
        self.index = 0
        self.closed = False
        self.query_id: Optional[int] = None
        self.current_root: Optional[VirtualNode] = None
        self.current_handle: Optional[TreeHandle] = None
        self.watchdog = None
        self._open()

    def _open(self) -> None:
        if self.closed:
            return
        cluster = self.client.cluster
        for _ in range(len(self.roots)):
            key = self.roots[self.index % len(self.roots)]
            entry = self.client.resolve_root(key)
            if entry is not None and entry[0].alive:
                node, handle = entry
                self.current_root, self.current_handle = node, handle
                self.query_id = node.engine.root_issue(
                    handle.tree_id, self.query, self._block)
                self._arm_watchdog()
                return
            self.index += 1
        # no live root right now: retry after one period
        self.watchdog = cluster.clock.call_later(self.query.epoch_ms or 1000.0,
                                                 self._open)

    def _arm_watchdog(self) -> None:
        cluster = self.client.cluster
        wait = (self.query.epoch_ms or 1000.0) * FAILOVER_GRACE_FACTOR + 2000.0
        if self.watchdog is not None:
            cluster.clock.cancel(self.watchdog)
        self.watchdog = cluster.clock.call_later(wait, self._failover)

    def _block(self, qid: int, epoch: int, rows, partial) -> None:
        if self.closed:
            return
        self._arm_watchdog()
        self.on_block(rows)

    def _failover(self) -> None:
        """The current root went silent past the grace window: try the next."""
        if self.closed:
            return
        self._cancel_current()
        self.index += 1
        self._open()

    def _cancel_current(self) -> None:
        if self.current_root is not None and self.current_root.alive \
                and self.query_id is not None:
            self.current_root.engine.root_cancel(self.current_handle.tree_id,
                                                 self.query_id)
        self.current_root = None
        self.query_id = None

    def close(self) -> None:
        self.closed = True
        if self.watchdog is not None:
            self.client.cluster.clock.cancel(self.watchdog)
        self._cancel_current()


class SimQueryClient:
    """QueryClient against one or more query roots inside the simulator."""

    def __init__(self, cluster: SimCluster, roots: dict[str, tuple[VirtualNode, TreeHandle]],
                 home: Optional[VirtualNode] = None):
        self.cluster = cluster
        self.roots = roots
        self.home = home or next(iter(roots.values()))[0]

    def resolve_root(self, key: str) -> Optional[tuple[VirtualNode, TreeHandle]]:
        return self.roots.get(key)

    def subscribe(self, roots, query, on_block):
        return _Subscription(self, roots, query, on_block)

    def invoke_all(self, roots, port, actuator, cb, _index=0):
        if _index >= len(roots):
            cb([])
            return
        entry = self.resolve_root(roots[_index])
        if entry is None or not entry[0].alive:
            self.invoke_all(roots, port, actuator, cb, _index + 1)
            return
        node, handle = entry
        done = {"called": False}

        def collect(qid, epoch, rows, partial):
            if not done["called"]:
                done["called"] = True
                cb(rows)

        node.engine.broadcast_actuator(handle.tree_id, port, actuator, collect)

    def invoke_direct(self, host, port, actuator, cb):
        self.cluster.fetch_remote(self.home, host, port, actuator,
                                  lambda raw: cb(_ack_rows(raw)))


def _ack_rows(raw: Optional[str]):
    from ..aggregate import ResultTuple
    if raw is None:
        return []
    return [ResultTuple("", 0, line) for line in raw.splitlines() if line]


class SimProcessClient:
    """ProcessClient backed by the simulator's application manager."""

    def __init__(self, cluster: SimCluster, manager):
        self.cluster = cluster
        self.manager = manager

    def start_instances(self, count, cb):
        started = self.manager.start(count)
        self.cluster.clock.call_later(1.0, lambda: cb(started))

    def kill_instance(self, target, cb):
        ok = self.manager.kill(target)
        self.cluster.clock.call_later(1.0, lambda: cb(ok))
