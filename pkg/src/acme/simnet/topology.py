"""Transit-stub topology generation and latency-weighted shortest paths.

A few transit domains of routers interconnect many small stub domains of
hosts. Link bandwidths follow the three classic classes: 100 Mb/s inside a
stub, 1.5 Mb/s from a stub up to its transit router, and 45 Mb/s between
transit routers. Latencies are drawn per link from configurable ranges and
calibrated so the all-pairs stub-to-stub ping distribution lands near a
wide-area target.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional

MBPS = 1_000_000

BW_STUB_STUB = 100 * MBPS
BW_STUB_TRANSIT = int(1.5 * MBPS)
BW_TRANSIT_TRANSIT = 45 * MBPS


def derive_seed(*parts) -> int:
    """Stable cross-process seed derivation (builtin hash() is salted)."""
    text = "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


@dataclass(frozen=True)
class Link:
    latency_ms: float
    bandwidth_bps: int


@dataclass
class TopologyParams:
    transit_domains: int = 3
    transit_per_domain: int = 6          # +/- 1, drawn per domain
    hosts_per_stub: int = 4              # +/- 1, drawn per stub
    min_hosts: int = 512
    lat_intra_stub: tuple = (0.5, 2.0)
    lat_stub_transit: tuple = (2.0, 6.0)
    lat_intra_transit: tuple = (2.0, 8.0)
    lat_inter_transit: tuple = (15.0, 35.0)


class SimTopology:
    """Undirected graph of transit routers and stub hosts."""

    def __init__(self):
        self.adj: dict[str, dict[str, Link]] = {}
        self.hosts: list[str] = []
        self.transit_nodes: list[str] = []
        self._dist: dict[str, dict[str, float]] = {}
        self._prev: dict[str, dict[str, str]] = {}
        self._paths: dict[tuple[str, str], tuple] = {}

    def add_link(self, a: str, b: str, latency_ms: float, bandwidth_bps: int) -> None:
        self.adj.setdefault(a, {})
        self.adj.setdefault(b, {})
        link = Link(latency_ms, bandwidth_bps)
        self.adj[a][b] = link
        self.adj[b][a] = link

    def _dijkstra(self, src: str) -> None:
        dist = {src: 0.0}
        prev: dict[str, str] = {}
        heap = [(0.0, src)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist.get(u, float("inf")):
                continue
            for v, link in self.adj[u].items():
                nd = d + link.latency_ms
                if nd < dist.get(v, float("inf")):
                    dist[v] = nd
                    prev[v] = u
                    heapq.heappush(heap, (nd, v))
        self._dist[src] = dist
        self._prev[src] = prev

    def one_way_latency_ms(self, a: str, b: str) -> float:
        if a == b:
            return 0.0
        if a not in self._dist:
            self._dijkstra(a)
        return self._dist[a][b]

    def path(self, a: str, b: str) -> tuple:
        """Directed hop sequence ((u, v, link), ...) along the latency-shortest route."""
        if a == b:
            return ()
        key = (a, b)
        cached = self._paths.get(key)
        if cached is not None:
            return cached
        if a not in self._dist:
            self._dijkstra(a)
        prev = self._prev[a]
        if b not in prev and b != a:
            raise KeyError(f"no path {a} -> {b}")
        hops = []
        cur = b
        while cur != a:
            p = prev[cur]
            hops.append((p, cur, self.adj[p][cur]))
            cur = p
        hops.reverse()
        out = tuple(hops)
        self._paths[key] = out
        return out

    def stub_ping_sample_ms(self, rng: random.Random, samples: int = 400) -> list[float]:
        """Round-trip latencies between random distinct stub hosts."""
        out = []
        for _ in range(samples):
            a, b = rng.sample(self.hosts, 2)
            out.append(2.0 * self.one_way_latency_ms(a, b))
        return out

    def is_connected(self) -> bool:
        if not self.adj:
            return False
        seen = set()
        stack = [next(iter(self.adj))]
        while stack:
            u = stack.pop()
            if u in seen:
                continue
            seen.add(u)
            stack.extend(self.adj[u])
        return len(seen) == len(self.adj)


def generate_topology(seed: int, params: TopologyParams = None) -> SimTopology:
    """Deterministically generate a transit-stub topology with enough stub
    hosts for `min_hosts` placements."""
    params = params or TopologyParams()
    rng = random.Random(derive_seed(seed, "topology"))
    topo = SimTopology()

    domains: list[list[str]] = []
    for d in range(params.transit_domains):
        size = max(2, params.transit_per_domain + rng.choice((-1, 0, 0, 1)))
        routers = [f"t{d}.{i}" for i in range(size)]
        domains.append(routers)
        topo.transit_nodes.extend(routers)
        # ring plus a couple of chords keeps intra-domain paths short
        for i, r in enumerate(routers):
            topo.add_link(r, routers[(i + 1) % size],
                          rng.uniform(*params.lat_intra_transit), BW_TRANSIT_TRANSIT)
        for _ in range(max(0, size - 4)):
            a, b = rng.sample(routers, 2)
            if b not in topo.adj[a]:
                topo.add_link(a, b, rng.uniform(*params.lat_intra_transit),
                              BW_TRANSIT_TRANSIT)
    for i in range(len(domains)):
        for j in range(i + 1, len(domains)):
            a = rng.choice(domains[i])
            b = rng.choice(domains[j])
            topo.add_link(a, b, rng.uniform(*params.lat_inter_transit),
                          BW_TRANSIT_TRANSIT)

    # stub domains round-robin over transit routers until host demand is met
    stub_idx = 0
    routers = topo.transit_nodes
    while len(topo.hosts) < params.min_hosts:
        router = routers[stub_idx % len(routers)]
        size = max(2, params.hosts_per_stub + rng.choice((-1, 0, 0, 1)))
        gateway = f"s{stub_idx}.h0"
        topo.add_link(gateway, router, rng.uniform(*params.lat_stub_transit),
                      BW_STUB_TRANSIT)
        topo.hosts.append(gateway)
        for h in range(1, size):
            host = f"s{stub_idx}.h{h}"
            topo.add_link(host, gateway, rng.uniform(*params.lat_intra_stub),
                          BW_STUB_STUB)
            topo.hosts.append(host)
        stub_idx += 1
    return topo
