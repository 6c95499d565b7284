"""Per-node query engine: query distribution, epoch-driven collection, and
timeout-bounded partial aggregation over a spanning tree.

A root engine turns a user query into a registration broadcast. Every node
then re-samples its local sensor once per epoch, folds whatever child partials
arrived before its deadline with the local value, and passes the result to its
parent. Child values for an epoch that was already passed up are discarded.
The engine is transport- and clock-agnostic: the simulator and the live
runtime inject their own environments.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

from .aggregate import (AggregateOp, PartialAggregate, ResultTuple,
                        finalize_partial, init_partial, merge_partial,
                        tuples_to_csv)
from .ids import NodeId
from .qtree import DIR_DOWN, DIR_UP, OverlayError, TreeKind
from .query import (ALL_HOSTS, LocalFetch, SensorQuery, Selection,
                    apply_selection, eval_predicate, parse_predicate)


def node_timeout(node_depth: int, max_depth: int, compute_max_ms: float,
                 latency_max_ms: float) -> float:
    """Per-epoch wait for child values before passing a partial upward.

    Proportional to the hop distance between this node and the deepest
    anticipated descendant, so deeper timeouts expire first and partials can
    cascade: timeout = (max_depth - node_depth) * (compute_max + latency_max).
    """
    d = max(0, max_depth - node_depth)
    return d * (compute_max_ms + latency_max_ms)


@dataclass(frozen=True)
class TreeView:
    """One node's slice of a spanning tree."""

    tree_id: int
    root: NodeId
    me: NodeId
    parent: Optional[NodeId]
    children: tuple[NodeId, ...]
    depth: int
    max_depth: int  # anticipated depth used for timeout budgeting

    @property
    def is_root(self) -> bool:
        return self.parent is None


class NodeEnv(Protocol):
    """Host environment injected into an engine (simulator or live runtime)."""

    hostname: str

    def now_ms(self) -> float: ...

    def call_later(self, delay_ms: float, fn: Callable[[], None]) -> object: ...

    def cancel(self, handle: object) -> None: ...

    def send(self, dst: NodeId, tree_id: int, direction: int, payload: dict,
             units: int) -> None: ...

    def fetch_group(self, requests: Sequence[tuple[int, str]],
                    cb: Callable[[dict], None]) -> None:
        """Fetch local sensors; cb receives {(port, sensor): raw_csv or None}."""
        ...

    def fetch_remote(self, host: str, port: int, sensor: str,
                     cb: Callable[[Optional[str]], None]) -> None: ...

    def merge_tail_ms(self, view: TreeView, partial: PartialAggregate) -> float:
        """Modelled compute time between emit readiness and the actual send."""
        ...


# Wire codecs -----------------------------------------------------------------

def query_to_wire(q: SensorQuery) -> dict:
    sel = None
    if q.selection is not None:
        sel = [q.selection.row_column, q.selection.row_regex, q.selection.value_column]
    return {
        "port": q.sensor_port,
        "sensor": q.sensor_name,
        "host": q.host_scope,
        "op": q.op.value,
        "epoch": q.epoch_ms,
        "sel": sel,
        "pred": q.predicate.encode() if q.predicate is not None else None,
    }


def query_from_wire(d: dict) -> SensorQuery:
    sel = d.get("sel")
    selection = Selection(sel[0], sel[1], sel[2]) if sel else None
    pred = parse_predicate(d["pred"]) if d.get("pred") else None
    return SensorQuery(d["port"], d["sensor"], d["host"], AggregateOp(d["op"]),
                       d["epoch"], selection, pred)


def partial_to_wire(p: PartialAggregate) -> dict:
    state = p.state
    if p.op in (AggregateOp.MIN, AggregateOp.MAX) and state is not None:
        state = list(state)
    elif p.op == AggregateOp.VALUE and state:
        state = [list(t) for t in state]
    return {"op": p.op.value, "state": state, "count": p.contributing_count}


def partial_from_wire(d: dict) -> PartialAggregate:
    op = AggregateOp(d["op"])
    state = d["state"]
    if op in (AggregateOp.MIN, AggregateOp.MAX) and state is not None:
        state = tuple(state)
    elif op == AggregateOp.AVG and state is not None:
        state = tuple(state)
    elif op == AggregateOp.VALUE and state:
        state = [tuple(t) for t in state]
    return PartialAggregate(op, state, d["count"])


# Engine ----------------------------------------------------------------------

@dataclass
class EngineConfig:
    compute_max_ms: float = 100.0
    latency_max_ms: float = 400.0
    default_max_depth: int = 32  # 2 * id digit count unless a tree hint is given


@dataclass
class _EpochState:
    pending_children: set
    merged_children: Optional[PartialAggregate] = None
    local_partial: Optional[PartialAggregate] = None
    local_resolved: bool = False
    deadline_passed: bool = False
    deadline_handle: object = None
    emitted: bool = False


@dataclass
class _RegisteredQuery:
    tree_id: int
    query_id: int
    query: SensorQuery
    max_depth: int
    reg_time_ms: float
    epochs: dict = field(default_factory=dict)
    watermark: int = -1
    next_epoch_handle: object = None
    cancelled: bool = False


ResultCallback = Callable[[int, int, list, PartialAggregate], None]


class IsingEngine:
    """Query processing state machine for one node."""

    def __init__(self, me: NodeId, env: NodeEnv, config: EngineConfig = None):
        self.me = me
        self.env = env
        self.config = config or EngineConfig()
        self.views: dict[int, TreeView] = {}
        self.queries: dict[tuple[int, int], _RegisteredQuery] = {}
        self._finished: dict[tuple[int, int], int] = {}
        self._finished_order: deque = deque()
        self._qid_counter = itertools.count(1)
        self._collectors: dict[int, ResultCallback] = {}
        self.late_discards = 0
        self.up_sends = 0

    # -- tree plumbing

    def install_tree(self, view: TreeView) -> None:
        self.views[view.tree_id] = view

    def view(self, tree_id: int) -> TreeView:
        try:
            return self.views[tree_id]
        except KeyError:
            raise OverlayError(f"unknown tree id {tree_id}") from None

    def count_children(self, tree_id: int) -> int:
        return len(self.view(tree_id).children)

    def whats_my_level(self, tree_id: int) -> int:
        return self.view(tree_id).depth

    def qtree_down(self, tree_id: int, payload: dict, units: int = 1) -> None:
        view = self.view(tree_id)
        for child in view.children:
            self.env.send(child, tree_id, DIR_DOWN, payload, units)

    def qtree_up(self, tree_id: int, payload: dict, units: int = 1) -> None:
        view = self.view(tree_id)
        if view.parent is not None:
            self.up_sends += 1
            self.env.send(view.parent, tree_id, DIR_UP, payload, units)
        else:
            self.on_message(self.me, tree_id, DIR_UP, payload, units)

    def on_message(self, src: NodeId, tree_id: int, direction: int,
                   payload: dict, units: int = 1) -> None:
        """Entry point for frames delivered by the transport."""
        if tree_id not in self.views:
            return  # static membership: frames for unknown trees are dropped
        if direction == DIR_DOWN:
            self._handle_down(tree_id, payload)
            self.qtree_down(tree_id, payload, units)  # forward to the subtree
        else:
            self._handle_up(tree_id, src, payload)

    # -- root API

    def root_issue(self, tree_id: int, query: SensorQuery,
                   on_result: ResultCallback) -> int:
        """Issue a query from the root of the given tree.

        Single-host queries bypass the tree entirely; ALL-scope queries are
        registered locally and broadcast to every descendant. `on_result`
        fires once per epoch with the finalized rows.
        """
        qid = next(self._qid_counter)
        self._collectors[qid] = on_result
        if query.host_scope != ALL_HOSTS:
            self._direct_query(qid, query)
            return qid
        view = self.view(tree_id)
        max_depth = view.max_depth or self.config.default_max_depth
        payload = {"kind": "register", "query_id": qid, "max_depth": max_depth,
                   "query": query_to_wire(query)}
        self._register(tree_id, qid, query, max_depth)
        self.qtree_down(tree_id, payload, units=1)
        return qid

    def root_cancel(self, tree_id: int, qid: int) -> None:
        self._collectors.pop(qid, None)
        self._teardown(tree_id, qid)
        self.qtree_down(tree_id, {"kind": "cancel", "query_id": qid}, units=1)

    def broadcast_actuator(self, tree_id: int, port: int, actuator: str,
                           on_result: ResultCallback) -> int:
        """Invoke an actuator everywhere: a snapshot VALUE query against the
        actuator's sensor interface, acks concatenated on the way up."""
        query = SensorQuery(port, actuator, ALL_HOSTS, AggregateOp.VALUE, 0)
        return self.root_issue(tree_id, query, on_result)

    def _direct_query(self, qid: int, query: SensorQuery) -> None:
        def done(raw: Optional[str]) -> None:
            now = int(self.env.now_ms())
            source = f"{query.host_scope}:{query.sensor_port}"
            if raw is None:
                self._deliver(qid, 0, [], PartialAggregate(query.op, None, 0))
                return
            values = apply_selection(raw, query.selection)
            partial = init_partial(query.op, values, source, now)
            rows = finalize_partial(partial, source, now)
            self._deliver(qid, 0, rows, partial)

        self.env.fetch_remote(query.host_scope, query.sensor_port,
                              query.sensor_name, done)

    def _deliver(self, qid: int, epoch: int, rows, partial) -> None:
        cb = self._collectors.get(qid)
        if cb is not None:
            cb(qid, epoch, rows, partial)

    # -- message handling

    def _handle_down(self, tree_id: int, payload: dict) -> None:
        kind = payload.get("kind")
        if kind == "register":
            self._register(tree_id, payload["query_id"],
                           query_from_wire(payload["query"]), payload["max_depth"])
        elif kind == "cancel":
            self._teardown(tree_id, payload["query_id"])

    def _handle_up(self, tree_id: int, child: NodeId, payload: dict) -> None:
        if payload.get("kind") != "partial":
            return
        key = (tree_id, payload["query_id"])
        epoch = payload["epoch"]
        partial = partial_from_wire(payload["partial"])
        rq = self.queries.get(key)
        if rq is None:
            if key in self._finished:
                self.late_discards += 1
            return
        if epoch <= rq.watermark:
            self.late_discards += 1  # stale: this epoch already went up
            return
        st = self._ensure_epoch(rq, epoch)
        st.pending_children.discard(child)
        if st.merged_children is None:
            st.merged_children = partial
        else:
            st.merged_children = merge_partial(st.merged_children, partial)
        self._check_emit(rq, epoch)

    # -- epoch machinery

    def _register(self, tree_id: int, qid: int, query: SensorQuery,
                  max_depth: int) -> None:
        key = (tree_id, qid)
        if key in self.queries or key in self._finished:
            return  # duplicate registration broadcast
        rq = _RegisteredQuery(tree_id, qid, query, max_depth, self.env.now_ms())
        self.queries[key] = rq
        self._begin_epoch(rq, 0)

    def _teardown(self, tree_id: int, qid: int) -> None:
        rq = self.queries.pop((tree_id, qid), None)
        if rq is None:
            return
        rq.cancelled = True
        if rq.next_epoch_handle is not None:
            self.env.cancel(rq.next_epoch_handle)
        for st in rq.epochs.values():
            if st.deadline_handle is not None:
                self.env.cancel(st.deadline_handle)
        self._remember_finished((tree_id, qid), rq.watermark)

    def _remember_finished(self, key, watermark: int) -> None:
        if key not in self._finished:
            self._finished_order.append(key)
            if len(self._finished_order) > 64:
                self._finished.pop(self._finished_order.popleft(), None)
        self._finished[key] = watermark

    def _ensure_epoch(self, rq: _RegisteredQuery, epoch: int) -> _EpochState:
        st = rq.epochs.get(epoch)
        if st is None:
            view = self.view(rq.tree_id)
            st = _EpochState(pending_children=set(view.children))
            rq.epochs[epoch] = st
        return st

    def _begin_epoch(self, rq: _RegisteredQuery, epoch: int) -> None:
        if rq.cancelled:
            return
        view = self.view(rq.tree_id)
        st = self._ensure_epoch(rq, epoch)
        if rq.query.epoch_ms > 0:
            rq.next_epoch_handle = self.env.call_later(
                rq.query.epoch_ms, lambda: self._begin_epoch(rq, epoch + 1))
        wait = node_timeout(view.depth, rq.max_depth,
                            self.config.compute_max_ms, self.config.latency_max_ms)
        if wait <= 0 or not view.children:
            st.deadline_passed = True
        else:
            st.deadline_handle = self.env.call_later(
                wait, lambda: self._on_deadline(rq, epoch))
        requests = [(rq.query.sensor_port, rq.query.sensor_name)]
        if rq.query.predicate is not None:
            for clause in rq.query.predicate.clauses:
                requests.append((clause.lhs.port, clause.lhs.sensor))
                if clause.rhs_ref is not None:
                    requests.append((clause.rhs_ref.port, clause.rhs_ref.sensor))
        self.env.fetch_group(requests, lambda results: self._local_done(rq, epoch, results))

    def _local_done(self, rq: _RegisteredQuery, epoch: int, results: dict) -> None:
        if rq.cancelled or epoch <= rq.watermark:
            return
        st = self._ensure_epoch(rq, epoch)
        query = rq.query
        raw = results.get((query.sensor_port, query.sensor_name))
        partial = PartialAggregate(query.op,
                                   [] if query.op == AggregateOp.VALUE else None, 0)
        if raw is not None:
            values = apply_selection(raw, query.selection)
            valid = bool(values)
            if valid and query.predicate is not None:
                fetch: LocalFetch = lambda port, sensor: results.get((port, sensor))
                valid = eval_predicate(fetch, query.predicate)
            if valid:
                source = f"{self.env.hostname}:{query.sensor_port}"
                partial = init_partial(query.op, values, source, int(self.env.now_ms()))
        st.local_partial = partial
        st.local_resolved = True
        self._check_emit(rq, epoch)

    def _on_deadline(self, rq: _RegisteredQuery, epoch: int) -> None:
        st = rq.epochs.get(epoch)
        if st is None or st.emitted:
            return
        st.deadline_passed = True
        st.deadline_handle = None
        self._check_emit(rq, epoch)

    def _check_emit(self, rq: _RegisteredQuery, epoch: int) -> None:
        st = rq.epochs.get(epoch)
        if st is None or st.emitted:
            return
        if not st.local_resolved:
            return
        if st.pending_children and not st.deadline_passed:
            return
        self._emit(rq, epoch, st)

    def _emit(self, rq: _RegisteredQuery, epoch: int, st: _EpochState) -> None:
        st.emitted = True
        if st.deadline_handle is not None:
            self.env.cancel(st.deadline_handle)
            st.deadline_handle = None
        rq.watermark = max(rq.watermark, epoch)
        merged = st.local_partial
        if st.merged_children is not None:
            merged = merge_partial(merged, st.merged_children) \
                if merged is not None else st.merged_children
        if merged is None:
            merged = PartialAggregate(rq.query.op, None, 0)
        view = self.view(rq.tree_id)
        rq.epochs.pop(epoch, None)
        tail = self.env.merge_tail_ms(view, merged)
        send = lambda: self._send_up(rq, epoch, merged, view)
        if tail > 0:
            self.env.call_later(tail, send)
        else:
            send()
        if rq.query.is_snapshot():
            self.queries.pop((rq.tree_id, rq.query_id), None)
            rq.cancelled = True
            self._remember_finished((rq.tree_id, rq.query_id), rq.watermark)

    def _send_up(self, rq: _RegisteredQuery, epoch: int,
                 merged: PartialAggregate, view: TreeView) -> None:
        if view.parent is not None:
            payload = {"kind": "partial", "query_id": rq.query_id,
                       "epoch": epoch, "partial": partial_to_wire(merged)}
            self.up_sends += 1
            self.env.send(view.parent, rq.tree_id, DIR_UP, payload,
                          units=merged.value_units())
        else:
            now = int(self.env.now_ms())
            source = f"{self.env.hostname}:{rq.query.sensor_port}"
            rows = finalize_partial(merged, source, now)
            self._deliver(rq.query_id, epoch, rows, merged)


def root_respond(query: SensorQuery, rows: Sequence[ResultTuple]) -> str:
    """Serialize finalized rows as the CSV block returned to the querying user."""
    return tuples_to_csv(rows)


def fanin_local(fetch: LocalFetch, instance_ports: Sequence[int],
                query: SensorQuery, hostname: str, now_ms: int) -> list[ResultTuple]:
    """Aggregate one sensor across all co-located application instances.

    Queries each instance's sensor server and merges the results with the
    regular partial machinery, so a host full of instances answers as a single
    sensor.
    """
    merged: Optional[PartialAggregate] = None
    for port in instance_ports:
        raw = fetch(port, query.sensor_name)
        if raw is None:
            continue
        values = apply_selection(raw, query.selection)
        part = init_partial(query.op, values, f"{hostname}:{port}", now_ms)
        merged = part if merged is None else merge_partial(merged, part)
    if merged is None:
        return []
    return finalize_partial(merged, f"{hostname}:{query.sensor_port}", now_ms)
