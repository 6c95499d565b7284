"""Acceptance suite: one test per criterion, each printing a PASS line with
its measured numbers. Run with `pytest tests/test_acceptance.py -v -s`.

The loss-reproduction case simulates 4000 full-size queries and dominates the
runtime (a few minutes); everything else is fast.
"""

import asyncio
import math
import random
import statistics
from functools import reduce

import pytest

from acme.aggregate import (AggregateOp, central_aggregate, finalize_partial,
                            init_partial, merge_partial)
from acme.ids import node_id_from_name
from acme.qtree import TreeKind, build_tree
from acme.simnet.experiments import (byte_totals, fitted_slope,
                                     median_latencies, run_churn_benchmark,
                                     run_grid, run_loss_experiment,
                                     run_trigger_with_roots, tree_shape_stats)
from acme.simnet.harness import SimCluster
from acme.simnet.topology import TopologyParams

ALL_OPS = list(AggregateOp)


def note(text):
    print(f"\nACCEPTANCE {text}")


# -- criterion 1: aggregation equals the central oracle -------------------------


def fold_tree(tree, op, values_by_node):
    """Lossless bottom-up aggregation over an explicit tree structure."""
    order = sorted(tree.depth, key=lambda nid: -tree.depth[nid])
    partials = {}
    for nid in order:
        partial = init_partial(op, values_by_node[nid], f"{nid}:9000",
                               tree.depth[nid])
        for child in tree.children.get(nid, ()):
            partial = merge_partial(partial, partials.pop(child))
        partials[nid] = partial
    return partials[tree.root]


def test_criterion_1_aggregation_oracle_equivalence():
    rng = random.Random(1001)
    cases = 0
    for case in range(200):
        n = rng.randint(1, 64)
        members = [node_id_from_name(f"c{case}-{i}") for i in range(n)]
        kind = rng.choice([TreeKind.DTREE, TreeKind.TTREE])
        latency = lambda a, b: 1.0
        view = rng.choice([1.0, 0.4])
        tree = build_tree(members, members[0], kind, latency,
                          view_fraction=view, view_seed=case)
        values_by_node = {}
        for nid in members:
            k = rng.randint(1, 3)
            # dyadic fractions sum exactly in binary floating point, so the
            # SUM comparison is exact under any merge order
            values_by_node[nid] = [
                rng.choice([str(rng.randint(-999, 999)),
                            repr(rng.randint(-64000, 64000) / 64)])
                for _ in range(k)]
        flat = [v for vals in values_by_node.values() for v in vals]
        for op in ALL_OPS:
            merged = fold_tree(tree, op, values_by_node)
            rows = finalize_partial(merged, "root:9000", 0)
            if op == AggregateOp.VALUE:
                got = sorted(r.data for r in rows)
                assert got == sorted(flat)
                continue
            expect = central_aggregate(op, flat)
            assert rows, f"no result for {op} over {len(flat)} values"
            if op == AggregateOp.AVG:
                assert math.isclose(float(rows[0].data), float(expect),
                                    rel_tol=1e-9)
            else:
                assert rows[0].data == expect
        cases += 1
    note(f"1: PASS aggregation-oracle equivalence over {cases} randomized "
         f"cases, all 7 operations")


# -- criteria 3 and 4 share one measurement grid --------------------------------


@pytest.fixture(scope="module")
def grid():
    rows = run_grid(seed=0, repetitions=11)
    return rows, median_latencies(rows), byte_totals(rows)


SIZES = (64, 128, 256, 384, 512)


def test_criterion_3_bytes_scaling(grid):
    rows, _, bytes_by = grid
    unit = 100
    for n in SIZES:
        for combo in (("dtree", "MIN"), ("dtree", "MEDIAN"), ("ttree", "MIN")):
            total = bytes_by[(n,) + combo]
            assert total == n * unit, f"{combo} at n={n}: {total} != {n * unit}"
    t_slope = fitted_slope([(n, bytes_by[(n, "ttree", "MEDIAN")]) for n in SIZES])
    d_slope = fitted_slope([(n, bytes_by[(n, "dtree", "MIN")]) for n in SIZES])
    ratio = t_slope / d_slope
    cluster = SimCluster(0, 512)
    handle = cluster.make_tree(TreeKind.TTREE)
    depth = cluster.trees[handle.tree_id].avg_depth()
    assert abs(ratio / depth - 1.0) <= 0.25
    note(f"3: PASS bytes: three coinciding curves exactly n*100; "
         f"slope ratio {ratio:.2f} vs measured avg depth {depth:.2f} "
         f"({(ratio / depth - 1) * 100:+.0f}%)")


def test_criterion_4_latency_trends(grid):
    _, med, _ = grid
    tmed = med[(512, "ttree", "MEDIAN")]
    dmed = med[(512, "dtree", "MEDIAN")]
    dmin = med[(512, "dtree", "MIN")]
    tmin = med[(512, "ttree", "MIN")]
    assert tmed > dmed >= dmin > tmin, (tmed, dmed, dmin, tmin)
    vs_dmin = 1 - tmin / dmin
    vs_tmed = 1 - tmin / tmed
    assert vs_dmin >= 0.40
    assert vs_tmed >= 0.60
    flat = tmin / med[(64, "ttree", "MIN")]
    assert flat <= 1.3
    note(f"4: PASS latency: T-MEDIAN {tmed:.0f} > D-MEDIAN {dmed:.0f} >= "
         f"D-MIN {dmin:.0f} > T-MIN {tmin:.0f} ms; reductions "
         f"{vs_dmin * 100:.0f}% vs D-MIN and {vs_tmed * 100:.0f}% vs T-MEDIAN; "
         f"size growth x{flat:.2f}")


# -- criterion 2: loss reproduction ---------------------------------------------


def test_criterion_2_loss_table_reproduction():
    n = 512
    rows = run_loss_experiment(seed=85, n=n, queries=1000)
    for row in rows:
        expected = 1 - (1 - row.p) ** n
        assert abs(row.lossy_fraction - expected) <= 0.05, row
        assert 4.0 <= row.mean_nodes_lost <= 10.0, row
    means = [row.mean_nodes_lost for row in rows]
    assert all(a <= b for a, b in zip(means, means[1:])), means
    summary = "; ".join(
        f"p={row.p}: {row.lossy_fraction * 100:.1f}% lossy "
        f"(formula {100 * (1 - (1 - row.p) ** n):.1f}%), "
        f"mean lost {row.mean_nodes_lost:.2f}" for row in rows)
    note(f"2: PASS loss table over 1000 COUNT queries per probability: {summary}")


# -- criterion 5: tree shape ------------------------------------------------------


def test_criterion_5_tree_shape():
    shapes = tree_shape_stats(range(10), n=512)
    for s in shapes:
        assert 4.5 <= s.avg_depth <= 8.5, (s.seed, s.avg_depth)
    assert all(s.max_depth > math.log(512, 4) for s in shapes)
    avgs = [round(s.avg_depth, 2) for s in shapes]
    note(f"5: PASS 512-node tree avg depth across 10 seeds: {avgs} "
         f"(band [4.5, 8.5]); max depths all > 4.5")


# -- criterion 6: timeout behavior -------------------------------------------------


def test_criterion_6_timeout_partial_and_discard():
    from acme.qtree import TreeStructure
    from acme.query import SensorQuery
    from acme.simnet.harness import SENSOR_PORT

    cluster = SimCluster(101, 8, topo_params=TopologyParams(min_hosts=16))
    nodes = cluster.nodes[:4]
    parent = {nodes[i].nid: nodes[i - 1].nid for i in range(1, 4)}
    children = {nodes[i].nid: ((nodes[i + 1].nid,) if i + 1 < 4 else ())
                for i in range(4)}
    depth = {nodes[i].nid: i for i in range(4)}
    structure = TreeStructure(TreeKind.TTREE, nodes[0].nid, parent, children, depth)
    handle = cluster.install_structure(structure)
    for i, node in enumerate(nodes):
        node.values.set("default", str(i + 1))
    b = nodes[2]
    delayed_subtree = structure.subtree_size(b.nid)
    assert delayed_subtree == 2

    def delay_hook(src, dst, payload):
        if src is b and payload.get("kind") == "partial" and payload["epoch"] == 0:
            return 10_000.0
        return 0.0

    cluster.up_delay_hook = delay_hook
    epochs = []
    cluster.issue_query(
        handle,
        SensorQuery(SENSOR_PORT, "value", op=AggregateOp.COUNT, epoch_ms=5000),
        on_epoch=lambda out: epochs.append(out))
    cluster.clock.run(stop=lambda: len(epochs) >= 2)
    cluster.clock.run(until_ms=cluster.clock.now_ms() + 15_000)  # late report lands
    assert epochs[0].partial.contributing_count == 4 - delayed_subtree
    assert int(epochs[0].rows[0].data) == 4 - delayed_subtree
    assert epochs[1].partial.contributing_count == 4  # late value discarded
    assert int(epochs[1].rows[0].data) == 4           # and never double counted
    assert nodes[1].engine.late_discards >= 1
    note(f"6: PASS delayed subtree of {delayed_subtree} excluded from the "
         f"epoch-0 partial (count {epochs[0].rows[0].data}), late report "
         f"discarded, epoch 1 complete")


# -- criterion 7: trigger configurations --------------------------------------------


def test_criterion_7a_benchmark_config():
    config = open("configs/benchmark_churn.xml", encoding="utf-8").read()
    result = run_churn_benchmark(seed=3, config_text=config)
    starts = result["start_events"]
    initial, churn = starts[:150], starts[150:]
    assert len(initial) == 150
    assert all(t <= 1000.0 for t in initial)
    assert all(900_000.0 <= t < 2_700_000.0 for t in churn)
    sigma = math.sqrt(180)
    assert abs(len(churn) - 180) <= 3 * sigma
    note(f"7a: PASS benchmark config: 150 instances at t=0, {len(churn)} churn "
         f"starts within [900 s, 2700 s] (180 +/- {3 * sigma:.0f})")


SPIKES = {7: (3, 60.0), 12: (5, 58.0), 16: (1, 64.0)}


def spiky_loads(node, now_ms):
    minute = int(now_ms // 60_000)
    spike = SPIKES.get(minute)
    if spike and node.index == spike[0]:
        return spike[1]
    return 1.0 + 0.1 * ((node.index + minute) % 3)


def test_criterion_7b_selfrepair_config():
    # direct-evaluation oracle over the scripted loads
    n, minutes = 8, 20
    loads = {m: [spiky_loads(type("N", (), {"index": i})(), m * 60_000 + 1)
                 for i in range(n)] for m in range(minutes)}
    avgs, expected, prev = {}, [], False
    for m in range(minutes):
        avgs[m] = sum(loads[m]) / n
        threshold = 5 * max(avgs[k] for k in range(max(0, m - 9), m + 1))
        cur = max(loads[m]) > threshold
        if cur and not prev:
            expected.append((m, loads[m].index(max(loads[m]))))
        prev = cur

    config = open("configs/selfrepair_reboot.xml", encoding="utf-8").read()
    result = run_trigger_with_roots(
        seed=11, config_text=config, n_nodes=n, root_indexes=(0, 1),
        load_script=spiky_loads, horizon_ms=minutes * 60_000.0)
    fires = [r for r in result["transcript"] if r.action == "EXECUTE"]
    got = [(int(r.timestamp_ms // 60_000) - 1, r.target) for r in fires]
    assert [g[0] for g in got] == [e[0] for e in expected]
    for (gm, target), (em, node_idx) in zip(got, expected):
        assert target.startswith(f"node-{node_idx:03d}")
    note(f"7b: PASS self-repair config fired exactly at oracle minutes "
         f"{[e[0] for e in expected]} on the oracle's extremal nodes")


# -- criterion 8: live-mode end-to-end latency ----------------------------------------


def test_criterion_8_real_mode_trigger_latency():
    from realmode_util import trigger_latency_trials

    latencies = asyncio.run(trigger_latency_trials(n_nodes=16, trials=10))
    assert len(latencies) == 10
    assert all(lat < 4000.0 for lat in latencies), latencies
    note(f"8: PASS 16-node loopback deployment: sensor event to all-node "
         f"actuator in {min(latencies):.0f}..{max(latencies):.0f} ms over 10 "
         f"trials (limit 4000 ms)")


# -- criterion 9: determinism -----------------------------------------------------------


def test_criterion_9_determinism(tmp_path):
    from acme.simnet.scenario import run_scenario

    scenario = {
        "kind": "loss", "nodes": "64", "queries": "60",
        "p_list": "0.0005, 0.002", "_sim_overrides": {}, "_topo_overrides": {},
        "_path": str(tmp_path / "x.scn"),
    }
    out_a = run_scenario(dict(scenario), seed=85, out_dir=str(tmp_path / "a"))
    out_b = run_scenario(dict(scenario), seed=85, out_dir=str(tmp_path / "b"))
    for pa, pb in zip(out_a, out_b):
        assert open(pa, "rb").read() == open(pb, "rb").read()

    grid_scn = {
        "kind": "latency", "sizes": "16,32", "repetitions": "3",
        "_sim_overrides": {}, "_topo_overrides": {}, "_path": str(tmp_path / "y.scn"),
    }
    ga = run_scenario(dict(grid_scn), seed=7, out_dir=str(tmp_path / "ga"))
    gb = run_scenario(dict(grid_scn), seed=7, out_dir=str(tmp_path / "gb"))
    for pa, pb in zip(ga, gb):
        assert open(pa, "rb").read() == open(pb, "rb").read()
    note("9: PASS identical seeds produce byte-identical result CSVs "
         "(loss and latency scenarios)")
