"""Spanning-tree overlay: prefix-routed tree construction and the five-call tree API.

Two topologies are supported. A direct tree (DTREE) connects every node
straight to the root. A prefix tree (TTREE) parents each node on the next hop
of its prefix-routing path toward the root, which concentrates long links near
the root and keeps leaf edges short.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .ids import BASE, NodeId, shared_prefix

LatencyFn = Callable[[NodeId, NodeId], float]


class TreeKind(str, Enum):
    DTREE = "dtree"
    TTREE = "ttree"


class OverlayError(Exception):
    """Invalid argument against the tree API (bad membership, unknown tree id)."""


@dataclass(frozen=True)
class TreeHandle:
    tree_id: int
    root: NodeId


@dataclass
class TreeStructure:
    """Immutable-by-convention description of one spanning tree."""

    kind: TreeKind
    root: NodeId
    parent: dict[NodeId, NodeId]
    children: dict[NodeId, tuple[NodeId, ...]]
    depth: dict[NodeId, int]

    def members(self) -> list[NodeId]:
        return list(self.depth.keys())

    def subtree_size(self, node: NodeId) -> int:
        size = 1
        for child in self.children.get(node, ()):
            size += self.subtree_size(child)
        return size

    def max_depth(self) -> int:
        return max(self.depth.values())

    def avg_depth(self) -> float:
        return sum(self.depth.values()) / len(self.depth)

    def depth_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for d in self.depth.values():
            hist[d] = hist.get(d, 0) + 1
        return dict(sorted(hist.items()))

    def validate(self) -> None:
        """Check the spanning-tree invariants; raises OverlayError on violation."""
        if self.root in self.parent:
            raise OverlayError("root must not have a parent")
        n = len(self.depth)
        if len(self.parent) != n - 1:
            raise OverlayError("every non-root node needs exactly one parent")
        for node, par in self.parent.items():
            if node not in self.children.get(par, ()):
                raise OverlayError(f"{node} missing from its parent's child list")
            if self.depth[node] != self.depth[par] + 1:
                raise OverlayError(f"depth of {node} inconsistent with parent")
        if self.depth[self.root] != 0:
            raise OverlayError("root depth must be 0")
        for node in self.depth:
            hops = 0
            cur = node
            while cur != self.root:
                cur = self.parent[cur]
                hops += 1
                if hops > n:
                    raise OverlayError("cycle in parent pointers")


def next_hop(v: NodeId, root: NodeId, members: Iterable[NodeId],
             latency: LatencyFn, view: Optional[set] = None) -> NodeId:
    """Next overlay hop from v toward root among the given members.

    Candidates must extend v's shared prefix with root by one digit; when no
    member carries the desired digit the digit is incremented mod 4 until a
    candidate set is nonempty (the root matches its own digits, so the search
    always terminates when root is a member). Among candidates the closest by
    latency wins, ties broken by smallest id. Never returns v itself.

    `view` optionally restricts which members v routes through, modelling the
    partial routing tables of a deployed overlay. Surrogate hops from a partial
    view strictly approach the desired digit (the increment stops before v's
    own digit), which rules out routing cycles; when the view holds no eligible
    entry at all, the hop resolves through the full desired-digit class, whose
    guaranteed last member is the root itself.
    """
    member_list = list(members)
    if not member_list:
        raise OverlayError("empty membership")
    if v not in member_list:
        raise OverlayError(f"{v} is not a member")
    if v == root:
        raise OverlayError("no next hop from the root to itself")
    if root not in member_list:
        raise OverlayError("root must be a member")
    level = shared_prefix(v, root)
    prefix = root.digits[:level]
    matching = [m for m in member_list if m != v and m.digits[:level] == prefix]
    return _prefix_hop(v, root, level, matching, latency, view)


def _prefix_hop(v: NodeId, root: NodeId, level: int, matching: Sequence[NodeId],
                latency: LatencyFn, view: Optional[set]) -> NodeId:
    """Shared hop-selection core for next_hop and build_tree.

    `matching` holds the members (except v) agreeing with root on the first
    `level` digits. Full view: closest member of the desired digit class.
    Partial view: level-keyed tables resolve one digit per hop, preferring an
    exact one-digit extension, then a deeper one, then surrogate digit classes,
    and finally the full desired class (never empty: the root matches itself).
    """
    want = root.digits[level]
    if view is None:
        full = [m for m in matching if m.digits[level] == want]
        return min(full, key=lambda m: (latency(v, m), m))
    exact = level + 1
    pool = [m for m in matching if m in view and m != root]
    own_step = (v.digits[level] - want) % BASE
    ranked = lambda m: (0 if shared_prefix(m, root) == exact else 1, latency(v, m), m)
    for step in range(own_step):
        digit = (want + step) % BASE
        candidates = [m for m in pool if m.digits[level] == digit]
        if candidates:
            return min(candidates, key=ranked)
    # the view holds no eligible entry: resolve over the full desired-digit
    # class, which is never empty because the root matches its own digits
    full = [m for m in matching if m.digits[level] == want]
    return min(full, key=ranked)


def node_views(members: Sequence[NodeId], view_fraction: float,
               view_seed: int) -> dict[NodeId, set]:
    """Deterministic partial membership views modelling incomplete routing tables.

    Each node sees an independent pseudo-random fraction of its peers; the
    spanning contract is unaffected because the root is always a fallback.
    """
    ordered = sorted(members)
    views: dict[NodeId, set] = {}
    for v in ordered:
        rng = random.Random((view_seed * 0x9E3779B1) ^ hash_fold(v))
        views[v] = {w for w in ordered if w != v and rng.random() < view_fraction}
    return views


def hash_fold(nid: NodeId) -> int:
    """Stable small integer derived from a NodeId (builtin hash() is salted)."""
    acc = 0
    for d in nid.digits:
        acc = (acc * 4 + d) & 0xFFFFFFFFFFFFFFFF
    return acc


def build_tree(members: Iterable[NodeId], root: NodeId, kind: TreeKind,
               latency: LatencyFn, view_fraction: float = 1.0,
               view_seed: int = 0) -> TreeStructure:
    """Build the spanning tree over a static membership snapshot.

    Pure function: identical inputs produce an identical structure. For the
    prefix tree each node's parent is its next_hop toward the root. With
    `view_fraction` < 1 each node routes over a seeded partial view of the
    membership, reproducing the longer climbs of a deployed overlay whose
    tables are never complete; the default is full knowledge.
    """
    member_list = sorted(set(members))
    if root not in member_list:
        raise OverlayError("root must be a member")
    parent: dict[NodeId, NodeId] = {}
    if kind == TreeKind.DTREE:
        for v in member_list:
            if v != root:
                parent[v] = root
    else:
        views = None
        if view_fraction < 1.0:
            views = node_views(member_list, view_fraction, view_seed)
        # members bucketed by shared-prefix length with the root so each node
        # scans only the candidates that match its prefix level
        width = len(root)
        buckets: list[list[NodeId]] = [[] for _ in range(width + 1)]
        for m in member_list:
            buckets[min(shared_prefix(m, root), width)].append(m)
        at_least: list[list[NodeId]] = [[] for _ in range(width + 2)]
        for lvl in range(width, -1, -1):
            at_least[lvl] = buckets[lvl] + at_least[lvl + 1]
        for v in member_list:
            if v == root:
                continue
            level = shared_prefix(v, root)
            matching = [m for m in at_least[level] if m != v]
            view = views[v] if views is not None else None
            parent[v] = _prefix_hop(v, root, level, matching, latency, view)
    children: dict[NodeId, list[NodeId]] = {m: [] for m in member_list}
    for node, par in parent.items():
        children[par].append(node)
    depth: dict[NodeId, int] = {root: 0}
    frontier = [root]
    while frontier:
        nxt = []
        for node in frontier:
            for child in children[node]:
                depth[child] = depth[node] + 1
                nxt.append(child)
        frontier = nxt
    if len(depth) != len(member_list):
        raise OverlayError("tree does not span the membership")
    return TreeStructure(
        kind=kind,
        root=root,
        parent=parent,
        children={k: tuple(sorted(v)) for k, v in children.items()},
        depth=depth,
    )


def tree_stats(tree: TreeStructure) -> dict:
    """Depth statistics for a built tree."""
    return {
        "members": len(tree.depth),
        "avg_depth": tree.avg_depth(),
        "max_depth": tree.max_depth(),
        "depth_histogram": tree.depth_histogram(),
    }


# Wire framing for tree messages: a 4-byte big-endian length prefix, then the
# frame body of tree id (8 bytes), direction (1 byte), and the payload.

DIR_DOWN = 0
DIR_UP = 1
_HEADER = 9


def encode_frame(tree_id: int, direction: int, payload: bytes) -> bytes:
    if direction not in (DIR_DOWN, DIR_UP):
        raise ValueError("direction must be 0 (down) or 1 (up)")
    body = tree_id.to_bytes(8, "big") + bytes([direction]) + payload
    return len(body).to_bytes(4, "big") + body


def decode_frame(body: bytes) -> tuple[int, int, bytes]:
    """Decode a frame body (without the outer length prefix)."""
    if len(body) < _HEADER:
        raise ValueError("frame body shorter than header")
    tree_id = int.from_bytes(body[:8], "big")
    direction = body[8]
    if direction not in (DIR_DOWN, DIR_UP):
        raise ValueError(f"bad direction byte {direction}")
    return tree_id, direction, body[_HEADER:]


_tree_id_counter = itertools.count(1)


def fresh_tree_id() -> int:
    """Process-unique tree id; the simulator supplies its own deterministic ids."""
    return next(_tree_id_counter)
