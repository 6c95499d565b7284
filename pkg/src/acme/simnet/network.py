"""Message delivery over the simulated topology: store-and-forward FIFO links,
loss injection on upward tree messages, and byte accounting.

Each directed link serializes messages in arrival order at the link's
bandwidth, then the message propagates for the link latency. Total bytes are
counted once per physical link traversal; the experiment layer separately
counts application-level bytes per overlay send.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..qtree import DIR_UP
from .events import SimClock
from .topology import SimTopology, derive_seed


@dataclass
class SimParams:
    message_bytes_per_unit: int = 100
    compute_flat_ms: float = 1.0            # monotonic merge / leaf wrap-up
    compute_per_value_ms: float = 1.0       # interior sort cost for list ops
    root_finalize_per_value_ms: float = 0.01
    sensor_service_ms: float = 50.0
    local_delivery_ms: float = 0.1          # same-host messages skip the links
    loss_fraction: float = 0.0              # drop chance per upward tree send
    route_view_fraction: float = 0.4        # routing-table completeness per node
    wire_overhead_bytes: int = 300          # per-message framing/header cost on links


@dataclass
class _Transfer:
    __slots__ = ("size", "path", "index", "arrive")
    size: int
    path: tuple
    index: int
    arrive: Callable[[], None]


class SimNetwork:
    """Delivers sized messages between hosts with FIFO queueing per link."""

    def __init__(self, clock: SimClock, topology: SimTopology, seed: int,
                 params: SimParams = None):
        self.clock = clock
        self.topology = topology
        self.params = params or SimParams()
        self.seed = seed
        self._next_free: dict[tuple[str, str], float] = {}
        self._loss_rngs: dict[str, random.Random] = {}
        # metrics
        self.link_bytes_total = 0
        self.link_traversals = 0
        self.up_drops = 0
        self.event_log: Optional[list] = None  # set to [] to record traversals

    # -- loss -------------------------------------------------------------

    def _loss_rng(self, node_name: str) -> random.Random:
        rng = self._loss_rngs.get(node_name)
        if rng is None:
            # independent stream per node, seeded differently on each node
            rng = random.Random(derive_seed(self.seed, "loss", node_name))
            self._loss_rngs[node_name] = rng
        return rng

    def drop_up_message(self, sender_name: str) -> bool:
        p = self.params.loss_fraction
        if p <= 0:
            return False
        if self._loss_rng(sender_name).random() < p:
            self.up_drops += 1
            return True
        return False

    # -- delivery -----------------------------------------------------------

    def deliver(self, size_bytes: int, src_host: str, dst_host: str,
                arrive: Callable[[], None]) -> None:
        """Queue a message of the given size along the physical route; `arrive`
        fires at the destination after queueing, service, and propagation."""
        if src_host == dst_host:
            self.clock.call_later(self.params.local_delivery_ms, arrive)
            return
        path = self.topology.path(src_host, dst_host)
        transfer = _Transfer(size_bytes, path, 0, arrive)
        self._enter_link(transfer)

    def _enter_link(self, tr: _Transfer) -> None:
        u, v, link = tr.path[tr.index]
        now = self.clock.now_ms()
        key = (u, v)
        start = max(now, self._next_free.get(key, 0.0))
        service = tr.size * 8000.0 / link.bandwidth_bps  # ms
        done = start + service
        self._next_free[key] = done
        self.link_bytes_total += tr.size
        self.link_traversals += 1
        if self.event_log is not None:
            self.event_log.append((now, u, v, tr.size))
        arrival = done + link.latency_ms
        tr.index += 1
        if tr.index >= len(tr.path):
            self.clock.call_at(arrival, tr.arrive)
        else:
            self.clock.call_at(arrival, lambda: self._enter_link(tr))
