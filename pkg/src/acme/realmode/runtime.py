"""Live node runtime: engine, sensor server core, overlay transport, and the
asyncio environment that binds them.

Every node derives the same spanning tree from the shared static membership
in its config, so no tree dissemination protocol is needed; the overlay only
carries query registrations and partials.
"""

from __future__ import annotations

import asyncio
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import httpx

from ..ids import NodeId, distinct_ids
from ..ising import EngineConfig, IsingEngine, TreeView
from ..qtree import DIR_DOWN, DIR_UP, TreeKind, build_tree
from ..query import ALL_HOSTS, SensorQuery
from ..sensact import (ActuatorLedger, CounterBank, LocalProcessBackend,
                       SensorServerCore, ValueStore, make_hostname_sensor,
                       make_load_sensor, register_process_actuators,
                       register_value_actuator, split_sensor_name, system_load,
                       ActuatorResult, OK)
from .transport import OverlayTransport

logger = logging.getLogger(__name__)

TREE_ID = 1
TIMEOUT_SLACK_LEVELS = 3
SENSOR_FETCH_TIMEOUT_S = 2.0


@dataclass(frozen=True)
class PeerConfig:
    name: str
    host: str
    sensor_port: int
    overlay_port: int


@dataclass
class NodeConfig:
    name: str
    host: str
    sensor_port: int
    overlay_port: int
    peers: list[PeerConfig]          # full membership including this node
    root_name: str
    digits: int = 16
    compute_max_ms: float = 100.0
    latency_max_ms: float = 400.0
    ledger_path: Optional[str] = None
    # queries assume one sensor port shared by all nodes; on a loopback
    # deployment each node listens on its own port instead, and this is the
    # shared port queries are written against
    logical_sensor_port: Optional[int] = None

    @classmethod
    def from_dict(cls, data: dict, name: Optional[str] = None) -> "NodeConfig":
        peers = [PeerConfig(**p) for p in data["peers"]]
        me = name or data["name"]
        mine = next(p for p in peers if p.name == me)
        return cls(
            name=me, host=mine.host, sensor_port=mine.sensor_port,
            overlay_port=mine.overlay_port, peers=peers,
            root_name=data["root"],
            digits=int(data.get("digits", 16)),
            compute_max_ms=float(data.get("compute_max_ms", 100.0)),
            latency_max_ms=float(data.get("latency_max_ms", 400.0)),
            ledger_path=data.get("ledger_path"),
        )


class AsyncClock:
    """Millisecond clock over the running asyncio loop."""

    def now_ms(self) -> float:
        return time.monotonic() * 1000.0

    def call_later(self, delay_ms: float, fn) -> object:
        loop = asyncio.get_event_loop()
        return loop.call_later(max(0.0, delay_ms) / 1000.0, fn)

    def cancel(self, handle) -> None:
        handle.cancel()


class _RealEnv:
    """NodeEnv over asyncio: HTTP sensor fetches, framed TCP overlay sends."""

    def __init__(self, runtime: "NodeRuntime"):
        self.runtime = runtime
        self.hostname = runtime.name
        self._clock = AsyncClock()

    def now_ms(self):
        return self._clock.now_ms()

    def call_later(self, delay_ms, fn):
        return self._clock.call_later(delay_ms, fn)

    def cancel(self, handle):
        self._clock.cancel(handle)

    def send(self, dst, tree_id, direction, payload, units):
        peer = self.runtime.peer_by_id.get(dst)
        if peer is None:
            logger.warning("%s: no address for %s", self.runtime.name, dst)
            return
        asyncio.ensure_future(self.runtime.transport.send(
            (peer.host, peer.overlay_port), self.runtime.node_id,
            tree_id, direction, payload))

    def fetch_group(self, requests, cb):
        async def fetch():
            results = {}
            for port, sensor in requests:
                results[(port, sensor)] = await self.runtime.fetch_local(port, sensor)
            cb(results)

        asyncio.ensure_future(fetch())

    def fetch_remote(self, host, port, sensor, cb):
        async def fetch():
            cb(await self.runtime.fetch_http(host, port, sensor))

        asyncio.ensure_future(fetch())

    def merge_tail_ms(self, view, partial):
        return 0.0


class NodeRuntime:
    """One live node: engine, sensors, transport, and root query surface."""

    def __init__(self, config: NodeConfig):
        self.config = config
        self.name = config.name
        names = sorted(p.name for p in config.peers)
        ids = distinct_ids(names, config.digits)
        self.ids_by_name = ids
        self.node_id = ids[config.name]
        self.peer_by_id: dict[NodeId, PeerConfig] = {
            ids[p.name]: p for p in config.peers}
        self.peer_by_name = {p.name: p for p in config.peers}
        self.is_root = config.name == config.root_name

        self.env = _RealEnv(self)
        self.engine = IsingEngine(self.node_id, self.env, EngineConfig(
            compute_max_ms=config.compute_max_ms,
            latency_max_ms=config.latency_max_ms,
            default_max_depth=2 * config.digits,
        ))
        self.transport = OverlayTransport(config.host, config.overlay_port,
                                          self._on_frame)
        self.core = SensorServerCore(config.name)
        self.values = ValueStore()
        self.counters = CounterBank()
        self.ledger = ActuatorLedger(config.ledger_path)
        self.processes = LocalProcessBackend()
        self._register_builtin_sensors()
        self._http: Optional[httpx.AsyncClient] = None
        self._streams: dict[int, asyncio.Queue] = {}
        self._tree = None
        self._install_tree()

    # -- construction helpers

    def _register_builtin_sensors(self) -> None:
        now = self.env.now_ms
        self.core.register("hostname", make_hostname_sensor(self.name))
        self.core.register("load", make_load_sensor(_safe_load))
        self.core.register("counter", self.counters.handler)
        self.core.register("value", self.values.sensor)
        register_value_actuator(self.core, self.values, self.ledger, now)
        register_process_actuators(self.core, self.processes, self.ledger, now)

    def _install_tree(self) -> None:
        members = sorted(self.ids_by_name.values())
        root_id = self.ids_by_name[self.config.root_name]
        # constant link metric: the tree is a pure function of the shared
        # membership list, so every node derives an identical structure
        tree = build_tree(members, root_id, TreeKind.TTREE, lambda a, b: 1.0)
        self._tree = tree
        self.engine.install_tree(TreeView(
            tree_id=TREE_ID, root=root_id, me=self.node_id,
            parent=tree.parent.get(self.node_id),
            children=tree.children.get(self.node_id, ()),
            depth=tree.depth[self.node_id],
            max_depth=tree.max_depth() + TIMEOUT_SLACK_LEVELS,
        ))

    def tree_stats(self, tree_id: int) -> Optional[dict]:
        if tree_id != TREE_ID or self._tree is None:
            return None
        from ..qtree import tree_stats
        stats = tree_stats(self._tree)
        return {"members": stats["members"], "avg_depth": stats["avg_depth"],
                "max_depth": stats["max_depth"],
                "depth_histogram": stats["depth_histogram"]}

    # -- lifecycle

    async def start(self) -> None:
        self._http = httpx.AsyncClient(timeout=SENSOR_FETCH_TIMEOUT_S)
        await self.transport.start()

    async def stop(self) -> None:
        await self.transport.stop()
        if self._http is not None:
            await self._http.aclose()
        self.processes.shutdown()

    def _on_frame(self, src: NodeId, tree_id: int, direction: int, payload: dict):
        self.engine.on_message(src, tree_id, direction, payload)

    # -- sensor fetching

    def _is_logical(self, port: int) -> bool:
        return port == (self.config.logical_sensor_port or self.config.sensor_port)

    async def fetch_local(self, port: int, sensor: str) -> Optional[str]:
        if self._is_logical(port):
            port = self.config.sensor_port
        return await self.fetch_http("127.0.0.1", port, sensor)

    async def fetch_http(self, host: str, port: int, sensor: str) -> Optional[str]:
        peer = self.peer_by_name.get(host)
        if peer is not None:
            host = peer.host
            if self._is_logical(port):
                port = peer.sensor_port
        name, args = split_sensor_name(sensor)
        try:
            resp = await self._http.get(f"http://{host}:{port}/{name}", params=args)
        except httpx.HTTPError:
            return None
        return resp.text if resp.status_code == 200 else None

    # -- root query surface

    async def run_snapshot(self, query: SensorQuery) -> list:
        loop = asyncio.get_event_loop()
        future = loop.create_future()

        def collect(qid, epoch, rows, partial):
            if not future.done():
                future.set_result(rows)

        self.engine.root_issue(TREE_ID, query, collect)
        return await future

    def register_stream(self, query: SensorQuery, queue: asyncio.Queue) -> int:
        def collect(qid, epoch, rows, partial):
            queue.put_nowait(rows)

        return self.engine.root_issue(TREE_ID, query, collect)

    def cancel_stream(self, qid: int) -> None:
        self.engine.root_cancel(TREE_ID, qid)


def _safe_load() -> float:
    try:
        return system_load()
    except OSError:
        return 0.0
