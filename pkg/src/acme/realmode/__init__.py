"""Live deployment: asyncio node runtimes, framed TCP overlay transport, and
HTTP clients for queries and triggers."""

from .runtime import NodeConfig, NodeRuntime, PeerConfig
from .cluster import LocalCluster

__all__ = ["NodeConfig", "NodeRuntime", "PeerConfig", "LocalCluster"]
