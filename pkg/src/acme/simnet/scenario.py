"""Scenario files: plain INI text naming an experiment and its knobs.

One scenario reproduces one experiment; runs are deterministic for a seed and
write fixed-format CSV tables.
"""

from __future__ import annotations

import configparser
import csv
import io
import os
from dataclasses import fields
from typing import Optional, Sequence

from ..aggregate import AggregateOp
from ..qtree import TreeKind
from .network import SimParams
from .topology import TopologyParams


class ScenarioError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.replace(";", ",").split(",") if x.strip()]


def load_scenario(path: str) -> dict:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ScenarioError(f"cannot read scenario file {path!r}")
    if "experiment" not in parser:
        raise ScenarioError(f"{path}: missing [experiment] section")
    exp = dict(parser["experiment"])
    if "kind" not in exp:
        raise ScenarioError(f"{path}: experiment.kind is required")
    exp["_sim_overrides"] = dict(parser["simnet"]) if "simnet" in parser else {}
    exp["_topo_overrides"] = dict(parser["topology"]) if "topology" in parser else {}
    exp["_path"] = path
    return exp


def _build_params(overrides: dict) -> SimParams:
    params = SimParams()
    valid = {f.name: f.type for f in fields(SimParams)}
    for key, value in overrides.items():
        if key not in valid:
            raise ScenarioError(f"unknown simnet knob {key!r}")
        current = getattr(params, key)
        setattr(params, key, type(current)(float(value)) if not isinstance(current, int)
                else int(value))
    return params


def _build_topo(overrides: dict, min_hosts: int) -> TopologyParams:
    topo = TopologyParams(min_hosts=min_hosts)
    for key, value in overrides.items():
        if not hasattr(topo, key):
            raise ScenarioError(f"unknown topology knob {key!r}")
        current = getattr(topo, key)
        if isinstance(current, tuple):
            setattr(topo, key, tuple(_floats(value)))
        else:
            setattr(topo, key, int(value))
    return topo


def _write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> str:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def run_scenario(scenario: dict, seed: Optional[int], out_dir: str) -> list[str]:
    """Execute a scenario and return the paths of the written result tables."""
    kind = scenario["kind"]
    if seed is None:
        if "seed" not in scenario:
            raise ScenarioError("a seed is required (scenario or --seed)")
        seed = int(scenario["seed"])
    os.makedirs(out_dir, exist_ok=True)
    runners = {
        "latency": _run_latency,
        "bytes": _run_bytes,
        "loss": _run_loss,
        "tree_shape": _run_tree_shape,
        "churn": _run_churn,
        "selfrepair": _run_selfrepair,
        "workload": _run_workload,
    }
    if kind not in runners:
        raise ScenarioError(f"unknown experiment kind {kind!r}")
    return runners[kind](scenario, seed, out_dir)


def _grid_args(scenario: dict) -> dict:
    sizes = tuple(_ints(scenario.get("sizes", "64,128,256,384,512")))
    kinds = tuple(TreeKind(k.strip()) for k in
                  scenario.get("topologies", "dtree,ttree").split(","))
    ops = tuple(AggregateOp(o.strip().upper()) for o in
                scenario.get("ops", "MIN,MEDIAN").split(","))
    return {
        "sizes": sizes,
        "kinds": kinds,
        "ops": ops,
        "repetitions": int(scenario.get("repetitions", "11")),
        "sim_params": _build_params(scenario["_sim_overrides"]),
        "topo_params": _build_topo(scenario["_topo_overrides"], max(sizes)),
    }


def _grid_rows(rows) -> list[list]:
    return [[r.n, r.topology, r.op, r.rep, f"{r.latency_ms:.3f}", r.app_bytes]
            for r in rows]


GRID_HEADER = ["n", "topology", "op", "rep", "latency_ms", "app_bytes"]


def _run_latency(scenario, seed, out_dir):
    from .experiments import run_grid

    rows = run_grid(seed, **_grid_args(scenario))
    return [_write_csv(os.path.join(out_dir, "latency_raw.csv"),
                       GRID_HEADER, _grid_rows(rows))]


def _run_bytes(scenario, seed, out_dir):
    from .experiments import run_grid

    args = _grid_args(scenario)
    args.setdefault("repetitions", 1)
    if "repetitions" not in scenario:
        args["repetitions"] = 1
    rows = run_grid(seed, **args)
    return [_write_csv(os.path.join(out_dir, "bytes_raw.csv"),
                       GRID_HEADER, _grid_rows(rows))]


def _run_loss(scenario, seed, out_dir):
    from .experiments import run_loss_experiment

    rows = run_loss_experiment(
        seed,
        n=int(scenario.get("nodes", "512")),
        p_list=tuple(_floats(scenario.get("p_list", "0.0001,0.0005,0.0010,0.0015"))),
        queries=int(scenario.get("queries", "100")),
        topo_params=_build_topo(scenario["_topo_overrides"],
                                int(scenario.get("nodes", "512"))),
    )
    table = [[f"{r.p:.6f}", r.queries, r.lossy_responses,
              f"{r.lossy_fraction:.6f}", f"{r.mean_nodes_lost:.4f}"]
             for r in rows]
    return [_write_csv(os.path.join(out_dir, "loss.csv"),
                       ["p", "queries", "lossy_responses", "lossy_fraction",
                        "mean_nodes_lost"], table)]


def _run_tree_shape(scenario, seed, out_dir):
    from .experiments import tree_shape_stats

    count = int(scenario.get("seed_count", "10"))
    seeds = [seed + i for i in range(count)]
    shapes = tree_shape_stats(seeds, n=int(scenario.get("nodes", "512")))
    table = [[s.seed, s.n, f"{s.avg_depth:.4f}", s.max_depth,
              " ".join(f"{d}:{c}" for d, c in s.depth_histogram.items())]
             for s in shapes]
    return [_write_csv(os.path.join(out_dir, "tree_shape.csv"),
                       ["seed", "n", "avg_depth", "max_depth", "depth_histogram"],
                       table)]


def _read_config_text(scenario: dict) -> str:
    config_path = scenario.get("config")
    if not config_path:
        raise ScenarioError("this experiment kind needs config = <xml path>")
    base = os.path.dirname(os.path.abspath(scenario["_path"]))
    full = config_path if os.path.isabs(config_path) \
        else os.path.join(base, config_path)
    with open(full, encoding="utf-8") as fh:
        return fh.read()


def _run_churn(scenario, seed, out_dir):
    from ..entrie import transcript_to_csv
    from .experiments import run_churn_benchmark

    result = run_churn_benchmark(
        seed, _read_config_text(scenario),
        n_nodes=int(scenario.get("nodes", "64")),
        horizon_ms=float(scenario.get("horizon_ms", "2760000")),
        workload=scenario.get("workload", "false").lower() == "true",
    )
    paths = []
    transcript_path = os.path.join(out_dir, "churn_transcript.csv")
    with open(transcript_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(transcript_to_csv(result["transcript"]))
    paths.append(transcript_path)
    events = [["start", f"{t:.1f}"] for t in result["start_events"]] + \
             [["kill", f"{t:.1f}"] for t in result["kill_events"]]
    paths.append(_write_csv(os.path.join(out_dir, "churn_events.csv"),
                            ["event", "timestamp_ms"], events))
    paths.append(_write_csv(os.path.join(out_dir, "churn_census.csv"),
                            ["timestamp_ms", "live_instances"],
                            [[f"{t:.1f}", c] for t, c in result["census"]]))
    return paths


def parse_spikes(text: str) -> dict:
    """Spike table `minute:node_index:value` items separated by whitespace."""
    out = {}
    for item in text.split():
        minute, node, value = item.split(":")
        out[int(minute)] = (int(node), float(value))
    return out


def _run_selfrepair(scenario, seed, out_dir):
    from ..entrie import transcript_to_csv
    from .experiments import run_trigger_with_roots

    spikes = parse_spikes(scenario.get("spikes", "7:3:60 12:5:58"))
    base = float(scenario.get("base_load", "1.0"))

    def loads(node, now_ms):
        minute = int(now_ms // 60_000)
        spike = spikes.get(minute)
        if spike and node.index == spike[0]:
            return spike[1]
        return base + 0.1 * ((node.index + minute) % 3)

    result = run_trigger_with_roots(
        seed, _read_config_text(scenario),
        n_nodes=int(scenario.get("nodes", "8")),
        root_indexes=tuple(_ints(scenario.get("roots", "0,1"))),
        load_script=loads,
        horizon_ms=float(scenario.get("horizon_ms", "1200000")),
    )
    path = os.path.join(out_dir, "selfrepair_transcript.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(transcript_to_csv(result["transcript"]))
    return [path]


def _run_workload(scenario, seed, out_dir):
    from .appsim import AppManager
    from .harness import SimCluster

    nodes = int(scenario.get("nodes", "50"))
    cluster = SimCluster(seed, nodes,
                         topo_params=_build_topo(scenario["_topo_overrides"], nodes),
                         params=_build_params(scenario["_sim_overrides"]))
    manager = AppManager(cluster, seed)
    manager.start(int(scenario.get("instances", "150")))
    manager.set_rate_all(float(scenario.get("period_ms", "20000")))
    horizon = float(scenario.get("horizon_ms", "1800000"))
    change_at = scenario.get("rate_change_minute")
    if change_at is not None:
        cluster.clock.call_later(
            float(change_at) * 60_000.0,
            lambda: manager.set_rate_all(float(scenario.get("fast_period_ms", "5000"))))
    cluster.clock.run(until_ms=horizon)
    table = [[m["window"], m["lookups"], f"{m['completion_rate']:.6f}",
              f"{m['success_rate']:.6f}", f"{m['mean_latency_ms']:.3f}"]
             for m in manager.metrics(up_to_ms=horizon)]
    return [_write_csv(os.path.join(out_dir, "workload_metrics.csv"),
                       ["window", "lookups", "completion_rate", "success_rate",
                        "mean_latency_ms"], table)]
