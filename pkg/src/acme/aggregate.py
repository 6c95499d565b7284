"""Mergeable partial aggregates and the result-tuple wire format.

Monotonic operations (MIN, MAX, SUM, COUNT) reduce to a single carried value,
AVG carries a (sum, count) pair, and MEDIAN/VALUE carry the full value list,
so only the first group shrinks data as it moves up a tree. Merging is
associative and commutative for every operation, which is what lets interior
nodes fold children in any arrival order.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence


class AggregateOp(str, Enum):
    MIN = "MIN"
    MAX = "MAX"
    AVG = "AVG"
    MEDIAN = "MEDIAN"
    SUM = "SUM"
    COUNT = "COUNT"
    VALUE = "VALUE"


MONOTONIC_OPS = {AggregateOp.MIN, AggregateOp.MAX, AggregateOp.SUM, AggregateOp.COUNT}
LIST_OPS = {AggregateOp.MEDIAN, AggregateOp.VALUE}


class AggregateError(Exception):
    pass


@dataclass(frozen=True)
class ResultTuple:
    """One response line: origin endpoint, origin-clock timestamp, datum text."""

    source: str
    timestamp_ms: int
    data: str


@dataclass
class PartialAggregate:
    """Op-specific mergeable state plus the count of nodes folded in so far.

    state by op:
      MIN/MAX  -> (value, source, timestamp_ms) of the extremal datum
      SUM      -> running sum
      AVG      -> (sum, count)
      COUNT    -> count of values
      MEDIAN   -> list of values
      VALUE    -> list of (source, timestamp_ms, data) tuples
    """

    op: AggregateOp
    state: object = None
    contributing_count: int = 0

    def is_empty(self) -> bool:
        return self.state is None if self.op not in LIST_OPS else not self.state

    def value_units(self) -> int:
        """Number of value units this partial occupies in a message."""
        if self.op in LIST_OPS:
            return max(1, len(self.state or []))
        if self.op == AggregateOp.AVG:
            return 2
        return 1


def parse_number(text: str) -> Optional[float]:
    try:
        return float(text.strip())
    except (ValueError, AttributeError):
        return None


def init_partial(op: AggregateOp, values: Sequence[str] = (), source: str = "",
                 timestamp_ms: int = 0) -> PartialAggregate:
    """Seed a partial from one node's local values; non-numeric values are
    invalid for numeric operations and contribute nothing."""
    op = AggregateOp(op)
    if op == AggregateOp.VALUE:
        tuples = [(source, timestamp_ms, v) for v in values]
        return PartialAggregate(op, tuples, 1 if tuples else 0)
    if op == AggregateOp.COUNT:
        # counting does not care whether the data parses as a number
        return PartialAggregate(op, len(values) or None, 1 if values else 0)
    numbers = [n for n in (parse_number(v) for v in values) if n is not None]
    if not numbers:
        return PartialAggregate(op, None if op not in LIST_OPS else [], 0)
    if op in (AggregateOp.MIN, AggregateOp.MAX):
        pick = min(numbers) if op == AggregateOp.MIN else max(numbers)
        return PartialAggregate(op, (pick, source, timestamp_ms), 1)
    if op == AggregateOp.SUM:
        return PartialAggregate(op, sum(numbers), 1)
    if op == AggregateOp.AVG:
        return PartialAggregate(op, (sum(numbers), len(numbers)), 1)
    if op == AggregateOp.MEDIAN:
        return PartialAggregate(op, list(numbers), 1)
    raise AggregateError(f"unhandled op {op}")


def merge_partial(a: PartialAggregate, b: PartialAggregate) -> PartialAggregate:
    """Combine two partials of the same operation."""
    if a.op != b.op:
        raise AggregateError(f"cannot merge {a.op} with {b.op}")
    op = a.op
    count = a.contributing_count + b.contributing_count
    if a.is_empty():
        return PartialAggregate(op, _copy_state(b.state, op), count)
    if b.is_empty():
        return PartialAggregate(op, _copy_state(a.state, op), count)
    if op in (AggregateOp.MIN, AggregateOp.MAX):
        better = min if op == AggregateOp.MIN else max
        state = better(a.state, b.state, key=lambda s: (s[0], s[1], s[2]))
        return PartialAggregate(op, state, count)
    if op in (AggregateOp.SUM, AggregateOp.COUNT):
        return PartialAggregate(op, a.state + b.state, count)
    if op == AggregateOp.AVG:
        return PartialAggregate(op, (a.state[0] + b.state[0], a.state[1] + b.state[1]), count)
    if op in LIST_OPS:
        return PartialAggregate(op, list(a.state) + list(b.state), count)
    raise AggregateError(f"unhandled op {op}")


def _copy_state(state, op):
    return list(state) if op in LIST_OPS and state is not None else state


def finalize_partial(p: PartialAggregate, root_source: str = "",
                     now_ms: int = 0) -> list[ResultTuple]:
    """Turn a fully merged partial into response tuples.

    Extremal operations keep the origin of the winning datum as the source so
    the caller can tell which node produced it; other scalar results are
    attributed to the responding root. An empty partial finalizes to no rows.
    """
    if p.is_empty():
        return []
    op = p.op
    if op in (AggregateOp.MIN, AggregateOp.MAX):
        value, source, ts = p.state
        return [ResultTuple(source, ts, format_number(value))]
    if op == AggregateOp.SUM:
        return [ResultTuple(root_source, now_ms, format_number(p.state))]
    if op == AggregateOp.COUNT:
        return [ResultTuple(root_source, now_ms, str(int(p.state)))]
    if op == AggregateOp.AVG:
        total, k = p.state
        return [ResultTuple(root_source, now_ms, format_number(total / k))]
    if op == AggregateOp.MEDIAN:
        ordered = sorted(p.state)
        mid = ordered[(len(ordered) - 1) // 2]  # lower middle on even length
        return [ResultTuple(root_source, now_ms, format_number(mid))]
    if op == AggregateOp.VALUE:
        return [ResultTuple(s, ts, d) for (s, ts, d) in p.state]
    raise AggregateError(f"unhandled op {op}")


def format_number(x: float) -> str:
    if isinstance(x, float) and x.is_integer():
        return str(int(x))
    return repr(x)


def central_aggregate(op: AggregateOp, values: Sequence[str]) -> Optional[str]:
    """Reference computation of an aggregate over the flat multiset of values.

    Independent of the merge machinery; used to check tree aggregation.
    """
    op = AggregateOp(op)
    if op == AggregateOp.VALUE:
        raise AggregateError("VALUE has no scalar central form; compare tuple multisets")
    if op == AggregateOp.COUNT:
        return str(len(values)) if values else None
    numbers = [n for n in (parse_number(v) for v in values) if n is not None]
    if not numbers:
        return None
    if op == AggregateOp.MIN:
        return format_number(min(numbers))
    if op == AggregateOp.MAX:
        return format_number(max(numbers))
    if op == AggregateOp.SUM:
        return format_number(sum(numbers))
    if op == AggregateOp.AVG:
        return format_number(sum(numbers) / len(numbers))
    if op == AggregateOp.MEDIAN:
        return format_number(sorted(numbers)[(len(numbers) - 1) // 2])
    raise AggregateError(f"unhandled op {op}")


def tuples_to_csv(rows: Sequence[ResultTuple]) -> str:
    """Serialize result tuples as CSV lines `source,timestamp,data`."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow([row.source, str(row.timestamp_ms), row.data])
    return buf.getvalue()


def tuples_from_csv(text: str) -> list[ResultTuple]:
    out = []
    for rec in csv.reader(io.StringIO(text)):
        if not rec:
            continue
        if len(rec) < 3:
            raise AggregateError(f"malformed result line: {rec!r}")
        source, ts = rec[0], int(rec[1])
        data = rec[2] if len(rec) == 3 else ",".join(rec[2:])
        out.append(ResultTuple(source, ts, data))
    return out
