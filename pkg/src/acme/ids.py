"""Node identifiers: fixed-width base-4 digit strings derived by hashing node names.

Prefix relationships between these identifiers drive all overlay routing; the
digit base is 4 so that aggregation trees over a few hundred nodes still have
several levels.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

BASE = 4
DEFAULT_DIGITS = 16


@dataclass(frozen=True, order=True)
class NodeId:
    """Identifier of a virtual node: a tuple of base-4 digits, most significant first."""

    digits: tuple[int, ...]

    def __post_init__(self):
        if not self.digits:
            raise ValueError("NodeId needs at least one digit")
        for d in self.digits:
            if not 0 <= d < BASE:
                raise ValueError(f"digit {d} out of base-{BASE} range")

    def __str__(self) -> str:
        return "".join(str(d) for d in self.digits)

    def __len__(self) -> int:
        return len(self.digits)

    @classmethod
    def parse(cls, text: str) -> "NodeId":
        return cls(tuple(int(c) for c in text))


def node_id_from_name(name: str, digits: int = DEFAULT_DIGITS) -> NodeId:
    """Hash a node name to a stable NodeId of the given digit count."""
    if not name:
        raise ValueError("node name must be nonempty")
    if digits < 1:
        raise ValueError("digit count must be >= 1")
    nbytes = (digits + 3) // 4
    raw = b""
    counter = 0
    while len(raw) < nbytes:
        raw += hashlib.sha256(name.encode("utf-8") + counter.to_bytes(4, "big")).digest()
        counter += 1
    out = []
    for i in range(digits):
        byte = raw[i // 4]
        shift = 6 - 2 * (i % 4)
        out.append((byte >> shift) & 0x3)
    return NodeId(tuple(out))


def shared_prefix(a: NodeId, b: NodeId) -> int:
    """Length of the common digit prefix of two ids."""
    n = 0
    for x, y in zip(a.digits, b.digits):
        if x != y:
            break
        n += 1
    return n


def distinct_ids(names: Iterable[str], digits: int = DEFAULT_DIGITS) -> dict[str, NodeId]:
    """Map distinct names to distinct ids, perturbing hash collisions.

    Collisions are astronomically rare at the default width but would corrupt
    tree structures keyed by id, so membership construction goes through here.
    Duplicate names are a configuration error and rejected.
    """
    seen: set[NodeId] = set()
    out: dict[str, NodeId] = {}
    for name in names:
        if name in out:
            raise ValueError(f"duplicate node name {name!r}")
        candidate = name
        for _ in range(64):
            nid = node_id_from_name(candidate, digits)
            if nid not in seen:
                break
            candidate += "+"
        else:
            raise ValueError(f"id space exhausted resolving collisions for {name!r}")
        seen.add(nid)
        out[name] = nid
    return out


def surrogate_owner(key: NodeId, members: Sequence[NodeId]) -> NodeId:
    """Deterministic owner of an arbitrary key among the given members.

    Resolves the key digit by digit; at a level where no member of the current
    candidate pool carries the key's digit, the desired digit is incremented
    mod 4 until some member matches. The pool shrinks monotonically, so the
    survivor is unique and every participant computes the same owner.
    """
    if not members:
        raise ValueError("empty membership")
    pool = list(members)
    for level in range(len(key)):
        if len(pool) == 1:
            break
        want = key.digits[level]
        for step in range(BASE):
            digit = (want + step) % BASE
            sub = [m for m in pool if m.digits[level] == digit]
            if sub:
                pool = sub
                break
    pool.sort()
    return pool[0]
