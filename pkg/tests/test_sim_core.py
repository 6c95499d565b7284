import random

import pytest

from acme.simnet.events import SimClock
from acme.simnet.network import SimNetwork, SimParams
from acme.simnet.topology import (BW_STUB_TRANSIT, BW_TRANSIT_TRANSIT,
                                  SimTopology, TopologyParams, derive_seed,
                                  generate_topology)


def test_clock_orders_by_time_then_insertion():
    clock = SimClock()
    seen = []
    clock.call_later(5, lambda: seen.append("b"))
    clock.call_later(1, lambda: seen.append("a"))
    clock.call_later(5, lambda: seen.append("c"))
    clock.run()
    assert seen == ["a", "b", "c"]
    assert clock.now_ms() == 5


def test_clock_cancel_and_past_rejection():
    clock = SimClock()
    seen = []
    h = clock.call_later(3, lambda: seen.append("x"))
    clock.cancel(h)
    clock.run()
    assert seen == []
    with pytest.raises(ValueError):
        clock.call_at(-1, lambda: None)


def test_clock_stop_predicate():
    clock = SimClock()
    seen = []
    for i in range(10):
        clock.call_later(i, lambda i=i: seen.append(i))
    clock.run(stop=lambda: len(seen) >= 3)
    assert len(seen) == 3


def test_topology_deterministic():
    t1 = generate_topology(42, TopologyParams(min_hosts=64))
    t2 = generate_topology(42, TopologyParams(min_hosts=64))
    assert t1.hosts == t2.hosts
    assert {k: dict(v) for k, v in t1.adj.items()} == {k: dict(v) for k, v in t2.adj.items()}


def test_topology_transit_count_near_paper_shape():
    topo = generate_topology(7, TopologyParams(min_hosts=512))
    assert 15 <= len(topo.transit_nodes) <= 21
    assert len(topo.hosts) >= 512
    assert topo.is_connected()


def test_topology_ping_median_within_factor_two_of_target():
    topo = generate_topology(3, TopologyParams(min_hosts=512))
    pings = sorted(topo.stub_ping_sample_ms(random.Random(0), samples=500))
    median = pings[len(pings) // 2]
    assert 35.0 <= median <= 140.0  # factor 2 around the 70 ms target


def test_link_classes_carry_expected_bandwidths():
    topo = generate_topology(9, TopologyParams(min_hosts=32))
    bws = {link.bandwidth_bps for peers in topo.adj.values() for link in peers.values()}
    assert bws == {100_000_000, 1_500_000, 45_000_000}


def test_deliver_service_plus_latency_arithmetic():
    # 450 bytes over 45 Mb/s is 0.08 ms of service; plus 10 ms propagation
    clock = SimClock()
    topo = SimTopology()
    topo.add_link("a", "b", 10.0, BW_TRANSIT_TRANSIT)
    topo.hosts = ["a", "b"]
    net = SimNetwork(clock, topo, seed=1)
    arrived = []
    net.deliver(450, "a", "b", lambda: arrived.append(clock.now_ms()))
    clock.run()
    assert arrived == [pytest.approx(10.08)]


def test_fifo_back_to_back_service():
    clock = SimClock()
    topo = SimTopology()
    topo.add_link("a", "b", 5.0, BW_STUB_TRANSIT)  # 1.5 Mb/s
    topo.hosts = ["a", "b"]
    net = SimNetwork(clock, topo, seed=1)
    arrived = []
    service = 100 * 8000.0 / BW_STUB_TRANSIT
    net.deliver(100, "a", "b", lambda: arrived.append(clock.now_ms()))
    net.deliver(100, "a", "b", lambda: arrived.append(clock.now_ms()))
    clock.run()
    assert arrived[0] == pytest.approx(service + 5.0)
    assert arrived[1] == pytest.approx(2 * service + 5.0)  # queued behind the first


def test_simultaneous_fanin_makespan_matches_closed_form():
    # k messages hitting one slow link back-to-back: makespan = k * service + latency
    clock = SimClock()
    topo = SimTopology()
    topo.add_link("src", "dst", 7.0, BW_STUB_TRANSIT)
    topo.hosts = ["src", "dst"]
    net = SimNetwork(clock, topo, seed=1)
    arrived = []
    k, size = 64, 100
    for _ in range(k):
        net.deliver(size, "src", "dst", lambda: arrived.append(clock.now_ms()))
    clock.run()
    service = size * 8000.0 / BW_STUB_TRANSIT
    assert arrived[-1] == pytest.approx(k * service + 7.0)


def test_bytes_counted_once_per_link_traversal():
    clock = SimClock()
    topo = SimTopology()
    topo.add_link("a", "m", 1.0, BW_TRANSIT_TRANSIT)
    topo.add_link("m", "b", 1.0, BW_TRANSIT_TRANSIT)
    topo.hosts = ["a", "b"]
    net = SimNetwork(clock, topo, seed=1)
    net.event_log = []
    net.deliver(200, "a", "b", lambda: None)
    clock.run()
    assert net.link_bytes_total == 400  # two traversals
    assert net.link_traversals == 2
    # conservation: the metric re-derives from the event log
    assert sum(size for (_, _, _, size) in net.event_log) == net.link_bytes_total


def test_loss_streams_deterministic_and_per_node():
    clock = SimClock()
    topo = SimTopology()
    topo.add_link("a", "b", 1.0, BW_TRANSIT_TRANSIT)
    topo.hosts = ["a", "b"]

    def draws(seed, node, p, k=2000):
        net = SimNetwork(clock, topo, seed, SimParams(loss_fraction=p))
        return [net.drop_up_message(node) for _ in range(k)]

    assert draws(5, "n1", 0.1) == draws(5, "n1", 0.1)
    assert draws(5, "n1", 0.1) != draws(5, "n2", 0.1)
    assert draws(6, "n1", 0.1) != draws(5, "n1", 0.1)
    assert not any(draws(5, "n1", 0.0))
    frac = sum(draws(5, "n3", 0.1)) / 2000
    assert 0.07 < frac < 0.13


def test_loss_nests_across_probabilities():
    # same seed and node: everything dropped at a lower p also drops at a higher p
    clock = SimClock()
    topo = SimTopology()
    topo.hosts = []
    low = SimNetwork(clock, topo, 11, SimParams(loss_fraction=0.001))
    high = SimNetwork(clock, topo, 11, SimParams(loss_fraction=0.01))
    a = [low.drop_up_message("n") for _ in range(20000)]
    b = [high.drop_up_message("n") for _ in range(20000)]
    assert all(y for x, y in zip(a, b) if x)


def test_derive_seed_stable():
    assert derive_seed(1, "x") == derive_seed(1, "x")
    assert derive_seed(1, "x") != derive_seed(2, "x")
