"""Canned experiments: latency/bytes scaling grids, loss injection, tree shape.

Each experiment is a deterministic function of its seed. Latency and bytes
share one grid runner (same queries, two readouts); the loss runner reuses one
topology across drop probabilities so that per-node loss streams line up and
results stay comparable between probabilities.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Optional, Sequence

from ..aggregate import AggregateOp
from ..ising import EngineConfig
from ..qtree import TreeKind
from ..query import SensorQuery
from .harness import SENSOR_PORT, SimCluster
from .network import SimParams
from .topology import SimTopology, TopologyParams, generate_topology

DEFAULT_SIZES = (64, 128, 256, 384, 512)
DEFAULT_KINDS = (TreeKind.DTREE, TreeKind.TTREE)
DEFAULT_OPS = (AggregateOp.MIN, AggregateOp.MEDIAN)
DEFAULT_P_LIST = (0.0001, 0.0005, 0.0010, 0.0015)


@dataclass
class GridRow:
    n: int
    topology: str
    op: str
    rep: int
    latency_ms: float
    app_bytes: int


def internal_query(op: AggregateOp) -> SensorQuery:
    """Snapshot over values generated internally at each node, which isolates
    the aggregation path from sensor behavior."""
    return SensorQuery(SENSOR_PORT, "internal", op=op, epoch_ms=0)


def run_grid(seed: int, sizes: Sequence[int] = DEFAULT_SIZES,
             kinds: Sequence[TreeKind] = DEFAULT_KINDS,
             ops: Sequence[AggregateOp] = DEFAULT_OPS,
             repetitions: int = 11,
             topo_params: Optional[TopologyParams] = None,
             sim_params: Optional[SimParams] = None) -> list[GridRow]:
    """Latency and byte totals for every (size, topology, op) combination."""
    topo_params = topo_params or TopologyParams(min_hosts=max(sizes))
    topo = generate_topology(seed, topo_params)
    tree_cache: dict = {}
    rows: list[GridRow] = []
    for n in sizes:
        for kind in kinds:
            cluster = SimCluster(seed, n, topology=topo, params=sim_params,
                                 tree_cache=tree_cache)
            handle = cluster.make_tree(kind)
            for op in ops:
                for rep in range(repetitions):
                    out = cluster.run_snapshot(handle, internal_query(op))
                    rows.append(GridRow(n, kind.value, op.value, rep,
                                        out.latency_ms, out.total_app_bytes))
    return rows


def median_latencies(rows: Sequence[GridRow]) -> dict:
    """Median response latency per (n, topology, op) over the repetitions."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.n, r.topology, r.op), []).append(r.latency_ms)
    return {k: statistics.median(v) for k, v in groups.items()}


def byte_totals(rows: Sequence[GridRow]) -> dict:
    """Byte total per (n, topology, op); identical across reps by determinism."""
    out: dict = {}
    for r in rows:
        key = (r.n, r.topology, r.op)
        if key in out and out[key] != r.app_bytes:
            raise AssertionError(f"byte totals differ across reps for {key}")
        out[key] = r.app_bytes
    return out


def fitted_slope(points: Sequence[tuple[float, float]]) -> float:
    """Least-squares slope through (x, y) points."""
    n = len(points)
    mx = sum(x for x, _ in points) / n
    my = sum(y for _, y in points) / n
    num = sum((x - mx) * (y - my) for x, y in points)
    den = sum((x - mx) ** 2 for x, _ in points)
    return num / den


def run_latency_experiment(seed: int, **kw) -> tuple[list[GridRow], dict]:
    rows = run_grid(seed, **kw)
    return rows, median_latencies(rows)


def run_bytes_experiment(seed: int, repetitions: int = 1, **kw) -> tuple[list[GridRow], dict]:
    rows = run_grid(seed, repetitions=repetitions, **kw)
    return rows, byte_totals(rows)


@dataclass
class LossRow:
    p: float
    queries: int
    lossy_responses: int
    mean_nodes_lost: float

    @property
    def lossy_fraction(self) -> float:
        return self.lossy_responses / self.queries


def run_loss_experiment(seed: int, n: int = 512,
                        p_list: Sequence[float] = DEFAULT_P_LIST,
                        queries: int = 100,
                        topo_params: Optional[TopologyParams] = None) -> list[LossRow]:
    """COUNT queries under injected loss on upward tree messages.

    Per probability: the fraction of responses missing at least one node, and
    the mean number of nodes absent from those lossy responses.
    """
    topo_params = topo_params or TopologyParams(min_hosts=n)
    topo = generate_topology(seed, topo_params)
    tree_cache: dict = {}
    out = []
    for p in p_list:
        cluster = SimCluster(seed, n, topology=topo, tree_cache=tree_cache,
                             params=SimParams(loss_fraction=p))
        handle = cluster.make_tree(TreeKind.TTREE)
        lossy = 0
        lost_total = 0
        for _ in range(queries):
            result = cluster.run_snapshot(handle, internal_query(AggregateOp.COUNT))
            count = int(result.rows[0].data) if result.rows else 0
            if count < n:
                lossy += 1
                lost_total += n - count
        mean_lost = (lost_total / lossy) if lossy else 0.0
        out.append(LossRow(p, queries, lossy, mean_lost))
    return out


def replay_loss_counts(seed: int, n: int = 512,
                       p_list: Sequence[float] = DEFAULT_P_LIST,
                       queries: int = 100,
                       topo_params: Optional[TopologyParams] = None) -> list[LossRow]:
    """Drop-replay oracle for the loss experiment.

    Drops are decided per (node, query) from the same per-node streams the
    network uses, and a dropped message always costs exactly the sender's
    subtree, so the COUNT outcomes can be replayed without running the event
    simulation. Used to cross-check run_loss_experiment.
    """
    import random as _random

    from .topology import derive_seed

    topo_params = topo_params or TopologyParams(min_hosts=n)
    topo = generate_topology(seed, topo_params)
    cluster = SimCluster(seed, n, topology=topo)
    handle = cluster.make_tree(TreeKind.TTREE)
    tree = cluster.trees[handle.tree_id]
    senders = [node for node in cluster.nodes if node is not cluster.root]
    sizes = {node.nid: tree.subtree_size(node.nid) for node in senders}
    rngs = {node.name: _random.Random(derive_seed(seed, "loss", node.name))
            for node in senders}
    stats = {p: [0, 0] for p in p_list}  # lossy count, lost sum
    for _ in range(queries):
        draws = [(node, rngs[node.name].random()) for node in senders]
        for p in p_list:
            dropped = {node.nid for node, u in draws if u < p}
            if not dropped:
                continue
            lost = 0
            for nid in dropped:
                cur = tree.parent.get(nid)
                while cur is not None and cur not in dropped:
                    cur = tree.parent.get(cur)
                if cur is None:  # maximal dropped node: its whole subtree is gone
                    lost += sizes[nid]
            stats[p][0] += 1
            stats[p][1] += lost
    return [LossRow(p, queries, stats[p][0],
                    stats[p][1] / stats[p][0] if stats[p][0] else 0.0)
            for p in p_list]


def run_churn_benchmark(seed: int, config_text: str, n_nodes: int = 64,
                        horizon_ms: float = 2_760_000.0,
                        workload: bool = False,
                        census_period_ms: float = 10_000.0) -> dict:
    """Drive a trigger configuration that starts and churns app instances.

    Returns the firing transcript, instance start/kill event times, and
    periodic live-population samples.
    """
    from ..entrie import TriggerEngine, parse_config
    from .appsim import AppManager
    from .control import SimProcessClient

    specs = parse_config(config_text)
    cluster = SimCluster(seed, n_nodes, topo_params=TopologyParams(min_hosts=n_nodes))
    manager = AppManager(cluster, seed, workload_enabled=workload)
    engine = TriggerEngine(specs, cluster.clock, client=None,
                           processes=SimProcessClient(cluster, manager), seed=seed)
    census: list[tuple[float, int]] = []

    def sample():
        census.append((cluster.clock.now_ms(), len(manager.census())))
        cluster.clock.call_later(census_period_ms, sample)

    engine.start()
    cluster.clock.call_later(census_period_ms, sample)
    cluster.clock.run(until_ms=horizon_ms)
    engine.stop()
    return {
        "cluster": cluster,
        "manager": manager,
        "engine": engine,
        "transcript": engine.transcript,
        "start_events": list(manager.start_events),
        "kill_events": list(manager.kill_events),
        "census": census,
    }


def run_trigger_with_roots(seed: int, config_text: str, n_nodes: int,
                           root_indexes: Sequence[int],
                           load_script, horizon_ms: float,
                           kill_root_at_ms: Optional[float] = None) -> dict:
    """Drive a sensor-conditioned trigger configuration against one or more
    query roots inside the simulator. `load_script(node, now_ms)` supplies the
    per-node load sensor; optionally the primary root dies mid-run."""
    from ..entrie import TriggerEngine, parse_config
    from .control import SimQueryClient
    from .harness import SENSOR_PORT

    specs = parse_config(config_text)
    cluster = SimCluster(seed, n_nodes, topo_params=TopologyParams(min_hosts=max(n_nodes, 16)))
    cluster.load_script = load_script
    roots = {}
    for idx in root_indexes:
        node = cluster.nodes[idx]
        handle = cluster.make_tree(TreeKind.TTREE, root=node)
        roots[f"{node.name}:{SENSOR_PORT}"] = (node, handle)
    client = SimQueryClient(cluster, roots)
    engine = TriggerEngine(specs, cluster.clock, client=client, seed=seed)
    engine.start()
    if kill_root_at_ms is not None:
        primary = cluster.nodes[root_indexes[0]]
        cluster.clock.call_later(kill_root_at_ms, lambda: cluster.kill(primary))
    cluster.clock.run(until_ms=horizon_ms)
    engine.stop()
    return {
        "cluster": cluster,
        "engine": engine,
        "transcript": engine.transcript,
        "roots": roots,
    }


@dataclass
class TreeShape:
    seed: int
    n: int
    avg_depth: float
    max_depth: int
    depth_histogram: dict
    parent_latency_by_depth: dict  # depth -> mean parent-edge latency (ms)


def tree_shape_stats(seeds: Sequence[int], n: int = 512,
                     kind: TreeKind = TreeKind.TTREE) -> list[TreeShape]:
    """Shape of the prefix tree across seeds: node ids, topology, and latencies
    all vary with the seed."""
    shapes = []
    for seed in seeds:
        cluster = SimCluster(seed, n, name_salt=f"-s{seed}",
                             topo_params=TopologyParams(min_hosts=n))
        handle = cluster.make_tree(kind)
        tree = cluster.trees[handle.tree_id]
        by_depth: dict[int, list[float]] = {}
        for node, parent in tree.parent.items():
            by_depth.setdefault(tree.depth[node], []).append(
                cluster.latency_between(node, parent))
        shapes.append(TreeShape(
            seed=seed, n=n,
            avg_depth=tree.avg_depth(),
            max_depth=tree.max_depth(),
            depth_histogram=tree.depth_histogram(),
            parent_latency_by_depth={d: sum(v) / len(v) for d, v in sorted(by_depth.items())},
        ))
    return shapes
