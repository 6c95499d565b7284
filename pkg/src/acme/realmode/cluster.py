"""In-process loopback deployment: N node runtimes, each serving its sensor
HTTP app and overlay transport on real sockets. Used by tests and the
end-to-end latency check."""

from __future__ import annotations

import asyncio
import socket
from typing import Optional

import uvicorn

from ..service import create_node_app
from .runtime import NodeConfig, NodeRuntime, PeerConfig


def reserve_ports(count: int) -> list[int]:
    """Grab distinct free loopback ports (best effort; closed before use)."""
    sockets, ports = [], []
    for _ in range(count):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        sockets.append(s)
        ports.append(s.getsockname()[1])
    for s in sockets:
        s.close()
    return ports


def loopback_configs(n: int, ports: Optional[list[int]] = None) -> list[NodeConfig]:
    ports = ports or reserve_ports(2 * n)
    peers = [PeerConfig(name=f"rn-{i:03d}", host="127.0.0.1",
                        sensor_port=ports[2 * i], overlay_port=ports[2 * i + 1])
             for i in range(n)]
    return [NodeConfig(name=p.name, host=p.host, sensor_port=p.sensor_port,
                       overlay_port=p.overlay_port, peers=list(peers),
                       root_name=peers[0].name,
                       logical_sensor_port=peers[0].sensor_port)
            for p in peers]


class LocalCluster:
    """Runs a full node population inside one asyncio loop on loopback."""

    def __init__(self, n: int):
        self.configs = loopback_configs(n)
        self.runtimes = [NodeRuntime(cfg) for cfg in self.configs]
        self.root = next(rt for rt in self.runtimes if rt.is_root)
        self._servers: list[uvicorn.Server] = []
        self._tasks: list[asyncio.Task] = []

    async def start(self) -> None:
        for runtime in self.runtimes:
            await runtime.start()
            config = uvicorn.Config(create_node_app(runtime), host=runtime.config.host,
                                    port=runtime.config.sensor_port,
                                    log_level="error", lifespan="off", access_log=False)
            server = uvicorn.Server(config)
            self._servers.append(server)
            self._tasks.append(asyncio.ensure_future(server.serve()))
        for server in self._servers:
            while not server.started:
                await asyncio.sleep(0.01)

    async def stop(self) -> None:
        for server in self._servers:
            server.should_exit = True
        for task in self._tasks:
            try:
                await asyncio.wait_for(task, timeout=5)
            except asyncio.TimeoutError:
                task.cancel()
        for runtime in self.runtimes:
            await runtime.stop()

    def root_url(self) -> str:
        return f"http://127.0.0.1:{self.root.config.sensor_port}"

    async def __aenter__(self):
        await self.start()
        return self

    async def __aexit__(self, *exc):
        await self.stop()
