from acme.ids import (DEFAULT_DIGITS, NodeId, distinct_ids, node_id_from_name,
                      shared_prefix, surrogate_owner)

import pytest


def test_same_name_same_id():
    assert node_id_from_name("alpha") == node_id_from_name("alpha")


def test_distinct_names_distinct_ids():
    ids = {node_id_from_name(f"host-{i}") for i in range(200)}
    assert len(ids) == 200


def test_sim_node_population_distinct():
    # the simulator names nodes node-<i>; 512 of them must hash apart
    ids = {node_id_from_name(f"node-{i:03d}") for i in range(512)}
    assert len(ids) == 512


def test_digit_width_and_range():
    nid = node_id_from_name("x")
    assert len(nid) == DEFAULT_DIGITS
    assert all(0 <= d <= 3 for d in nid.digits)
    assert len(node_id_from_name("x", digits=7)) == 7


def test_digit_distribution_roughly_uniform():
    counts = [0, 0, 0, 0]
    n = 2000
    for i in range(n):
        for d in node_id_from_name(f"u{i}").digits:
            counts[d] += 1
    total = n * DEFAULT_DIGITS
    for c in counts:
        assert 0.22 < c / total < 0.28


def test_parse_str_round_trip():
    nid = node_id_from_name("roundtrip")
    assert NodeId.parse(str(nid)) == nid


def test_rejects_bad_digits():
    with pytest.raises(ValueError):
        NodeId((0, 4, 1))
    with pytest.raises(ValueError):
        NodeId(())
    with pytest.raises(ValueError):
        node_id_from_name("")


def test_shared_prefix():
    a = NodeId((1, 2, 3, 0))
    assert shared_prefix(a, NodeId((1, 2, 0, 0))) == 2
    assert shared_prefix(a, a) == 4
    assert shared_prefix(a, NodeId((3, 2, 3, 0))) == 0


def test_duplicate_names_rejected():
    with pytest.raises(ValueError):
        distinct_ids(["a", "b", "a"])


def test_collision_perturbation_at_narrow_width():
    # at 2 digits there are only 16 ids, so 10 names force hash collisions;
    # perturbation must still hand out distinct ids
    mapping = distinct_ids([f"n{i}" for i in range(10)], digits=2)
    assert len(set(mapping.values())) == 10


def test_id_space_exhaustion_raises():
    with pytest.raises(ValueError):
        distinct_ids([f"n{i}" for i in range(5)], digits=1)


def test_surrogate_owner_of_member_id_is_member():
    members = [node_id_from_name(f"m{i}") for i in range(40)]
    for m in members[:10]:
        assert surrogate_owner(m, members) == m


def test_surrogate_owner_deterministic_and_in_members():
    members = [node_id_from_name(f"m{i}") for i in range(64)]
    key = node_id_from_name("some key not in the set")
    owner = surrogate_owner(key, members)
    assert owner in members
    assert surrogate_owner(key, list(reversed(members))) == owner
