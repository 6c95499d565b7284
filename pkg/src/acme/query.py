"""Sensor query model: URL grammar, row selection, and value predicates.

A query names a sensor (by server port and sensor name), a scope, an
aggregation operation, and an epoch duration (0 means a one-shot snapshot).
Optional selection criteria filter rows of the sensor's CSV output by regex
and project one column; an optional predicate invalidates a node's values
unless comparisons against other local sensors hold.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence
from urllib.parse import parse_qsl, quote, urlsplit

from .aggregate import AggregateOp, parse_number

ALL_HOSTS = "ALL"

COMPARATORS = (">=", "<=", "!=", "=", ">", "<")


class QueryParseError(ValueError):
    """Query rejected; `field` names the offending component."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class Selection:
    row_column: int  # 1-based
    row_regex: str
    value_column: Optional[int] = None

    def __post_init__(self):
        if self.row_column < 1:
            raise QueryParseError("rowcol", "column indexes are 1-based")
        if self.value_column is not None and self.value_column < 1:
            raise QueryParseError("valcol", "column indexes are 1-based")
        try:
            re.compile(self.row_regex)
        except re.error as exc:
            raise QueryParseError("rowregex", f"bad regular expression: {exc}") from None


@dataclass(frozen=True)
class SensorRef:
    port: int
    sensor: str
    selection: Optional[Selection] = None

    def encode(self) -> str:
        parts = [str(self.port), self.sensor]
        if self.selection is not None:
            parts += [str(self.selection.row_column), self.selection.row_regex]
            if self.selection.value_column is not None:
                parts.append(str(self.selection.value_column))
        return ":".join(parts)


@dataclass(frozen=True)
class Clause:
    lhs: SensorRef
    comparator: str
    rhs_const: Optional[str] = None
    rhs_ref: Optional[SensorRef] = None

    def encode(self) -> str:
        rhs = self.rhs_ref.encode() if self.rhs_ref is not None else self.rhs_const
        return f"{self.lhs.encode()} {self.comparator} {rhs}"


@dataclass(frozen=True)
class PredicateExpr:
    clauses: tuple[Clause, ...]
    joiners: tuple[str, ...]  # "AND"/"OR", one fewer than clauses

    def encode(self) -> str:
        out = [self.clauses[0].encode()]
        for join, clause in zip(self.joiners, self.clauses[1:]):
            out.append(f";{join}")
            out.append(clause.encode())
        return "".join(out)


@dataclass(frozen=True)
class SensorQuery:
    sensor_port: int
    sensor_name: str
    host_scope: str = ALL_HOSTS
    op: AggregateOp = AggregateOp.VALUE
    epoch_ms: int = 0
    selection: Optional[Selection] = None
    predicate: Optional[PredicateExpr] = None

    def is_snapshot(self) -> bool:
        return self.epoch_ms == 0

    def to_url(self, path: str = "/ising") -> str:
        params = [
            ("port", str(self.sensor_port)),
            ("sensor", self.sensor_name),
            ("host", self.host_scope),
            ("op", self.op.value),
            ("epoch", str(self.epoch_ms)),
        ]
        if self.selection is not None:
            params.append(("rowcol", str(self.selection.row_column)))
            params.append(("rowregex", self.selection.row_regex))
            if self.selection.value_column is not None:
                params.append(("valcol", str(self.selection.value_column)))
        if self.predicate is not None:
            params.append(("pred", self.predicate.encode()))
        return path + "?" + "&".join(f"{k}={quote(v, safe='')}" for k, v in params)


def _int_field(raw: dict, name: str, default: Optional[int] = None,
               minimum: int = 0) -> Optional[int]:
    if name not in raw:
        return default
    try:
        value = int(raw[name])
    except ValueError:
        raise QueryParseError(name, f"not an integer: {raw[name]!r}") from None
    if value < minimum:
        raise QueryParseError(name, f"must be >= {minimum}")
    return value


def parse_query(url_path_and_query: str) -> SensorQuery:
    """Parse a query URL (path plus query string) into a SensorQuery."""
    split = urlsplit(url_path_and_query)
    raw = dict(parse_qsl(split.query, keep_blank_values=True))
    port = _int_field(raw, "port", minimum=1)
    if port is None:
        raise QueryParseError("port", "required")
    sensor = raw.get("sensor", "")
    if not sensor:
        raise QueryParseError("sensor", "required")
    host = raw.get("host", ALL_HOSTS)
    op_name = raw.get("op")
    if not op_name:
        raise QueryParseError("op", "required")
    try:
        op = AggregateOp(op_name.upper())
    except ValueError:
        raise QueryParseError("op", f"unknown operation {op_name!r}") from None
    epoch = _int_field(raw, "epoch", default=0)
    selection = None
    if "rowcol" in raw or "rowregex" in raw:
        if "rowcol" not in raw or "rowregex" not in raw:
            raise QueryParseError("rowcol", "rowcol and rowregex must be given together")
        selection = Selection(
            row_column=_int_field(raw, "rowcol", minimum=1),
            row_regex=raw["rowregex"],
            value_column=_int_field(raw, "valcol", minimum=1),
        )
    elif "valcol" in raw:
        raise QueryParseError("valcol", "valcol requires rowcol and rowregex")
    predicate = parse_predicate(raw["pred"]) if raw.get("pred") else None
    return SensorQuery(port, sensor, host, op, epoch, selection, predicate)


def _parse_ref(text: str, field_name: str) -> SensorRef:
    # Encoded as port:sensor[:rowcol:rowregex[:valcol]]. Colons inside the
    # regex must be escaped (e.g. \x3a) since ':' separates components.
    parts = text.split(":")
    if len(parts) < 2:
        raise QueryParseError(field_name, f"sensor reference needs port:name, got {text!r}")
    try:
        port = int(parts[0])
    except ValueError:
        raise QueryParseError(field_name, f"bad port in reference {text!r}") from None
    sensor = parts[1]
    if not sensor:
        raise QueryParseError(field_name, "empty sensor name in reference")
    if len(parts) == 2:
        return SensorRef(port, sensor)
    if len(parts) not in (4, 5):
        raise QueryParseError(field_name, f"malformed selection in reference {text!r}")
    try:
        rowcol = int(parts[2])
        valcol = int(parts[4]) if len(parts) == 5 else None
    except ValueError:
        raise QueryParseError(field_name, f"bad column index in reference {text!r}") from None
    return SensorRef(port, sensor, Selection(rowcol, parts[3], valcol))


def parse_predicate(text: str, field_name: str = "pred") -> PredicateExpr:
    """Parse `clause(;AND|;OR)clause...` with clauses `ref CMP (const|ref)`."""
    pieces = re.split(r";(AND|OR)", text)
    clause_texts = pieces[0::2]
    joiners = tuple(pieces[1::2])
    clauses = []
    for part in clause_texts:
        m = re.match(r"^\s*(.*?)\s+(>=|<=|!=|=|>|<)\s+(.*?)\s*$", part)
        if not m:
            raise QueryParseError(field_name, f"clause missing comparator: {part!r}")
        lhs = _parse_ref(m.group(1), field_name)
        rhs_text = m.group(3)
        if not rhs_text:
            raise QueryParseError(field_name, f"clause missing right-hand side: {part!r}")
        rhs_ref = rhs_const = None
        if re.match(r"^\d+:", rhs_text):
            rhs_ref = _parse_ref(rhs_text, field_name)
        else:
            rhs_const = rhs_text
        clauses.append(Clause(lhs, m.group(2), rhs_const, rhs_ref))
    return PredicateExpr(tuple(clauses), joiners)


def apply_selection(raw_csv: str, selection: Optional[Selection]) -> list[str]:
    """Filter sensor CSV rows by the selection; None passes rows through verbatim.

    A row whose width does not reach the referenced column is treated as
    non-matching rather than an error.
    """
    lines = [ln for ln in raw_csv.splitlines() if ln != ""]
    if selection is None:
        return lines
    pattern = re.compile(selection.row_regex)
    out = []
    for line in lines:
        cells = next(csv.reader(io.StringIO(line)), [])
        if selection.row_column > len(cells):
            continue
        if not pattern.search(cells[selection.row_column - 1]):
            continue
        if selection.value_column is None:
            out.append(line)
        elif selection.value_column <= len(cells):
            out.append(cells[selection.value_column - 1])
    return out


def compare_values(lhs: str, comparator: str, rhs: str) -> bool:
    """Comparison used by predicates: numeric when both sides parse, else lexical."""
    ln, rn = parse_number(lhs), parse_number(rhs)
    a, b = (ln, rn) if ln is not None and rn is not None else (lhs, rhs)
    if comparator == "=":
        return a == b
    if comparator == "!=":
        return a != b
    if comparator == ">":
        return a > b
    if comparator == "<":
        return a < b
    if comparator == ">=":
        return a >= b
    if comparator == "<=":
        return a <= b
    raise QueryParseError("pred", f"unknown comparator {comparator!r}")

# Fetches raw CSV from a sensor on the local machine, or None when unreachable.
LocalFetch = Callable[[int, str], Optional[str]]


def eval_predicate(local_sensor_fetch: LocalFetch, predicate: PredicateExpr) -> bool:
    """Evaluate a predicate against local sensors.

    Any referenced sensor that is unreachable or yields no value makes the
    whole predicate false (the node's value becomes invalid); evaluation never
    raises for data conditions. Clauses fold left to right through AND/OR.
    """

    def resolve(ref: SensorRef) -> Optional[str]:
        raw = local_sensor_fetch(ref.port, ref.sensor)
        if raw is None:
            return None
        values = apply_selection(raw, ref.selection)
        return values[0] if values else None

    results = []
    for clause in predicate.clauses:
        lhs = resolve(clause.lhs)
        if lhs is None:
            return False
        if clause.rhs_ref is not None:
            rhs = resolve(clause.rhs_ref)
            if rhs is None:
                return False
        else:
            rhs = clause.rhs_const
        results.append(compare_values(lhs, clause.comparator, rhs))
    verdict = results[0]
    for join, nxt in zip(predicate.joiners, results[1:]):
        verdict = (verdict and nxt) if join == "AND" else (verdict or nxt)
    return verdict
