"""Trigger engine: XML-configured conditions bound to actuator-invoking actions.

A trigger fires its action when all of its conditions hold, subject to a
repeat policy. Conditions are timer windows, completions of other actions, or
comparisons over (histories of) aggregate sensor readings streamed from a
query root, with ordered failover across several roots. The engine is
clock- and transport-agnostic so the simulator and the live runtime drive the
same code.
"""

from __future__ import annotations

import csv
import io
import math
import random
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Protocol, Sequence

from .aggregate import AggregateOp, central_aggregate, parse_number
from .query import ALL_HOSTS, SensorQuery, compare_values

EVAL_TICK_FLOOR_MS = 100.0


class ConfigError(ValueError):
    """Trigger configuration rejected; message cites the element path."""


# -- configuration model ---------------------------------------------------------


class RepeatMode(str, Enum):
    FIRST_TRANSITION = "firstTransition"
    EVERY_TRANSITION = "everyTransition"
    PERIODIC_FIRST_TRUE = "periodicFirstTrue"
    PERIODIC_EVERY_TRUE = "periodicEveryTrue"


@dataclass(frozen=True)
class RepeatPolicy:
    # without an explicit repeat element a trigger fires on every transition
    # from false to true, which matches periodic re-checking policies
    mode: RepeatMode = RepeatMode.EVERY_TRANSITION
    period_ms: Optional[float] = None      # fixed period
    mean_period_ms: Optional[float] = None  # exponential period

    def __post_init__(self):
        if self.mode in (RepeatMode.PERIODIC_FIRST_TRUE, RepeatMode.PERIODIC_EVERY_TRUE):
            if self.period_ms is None and self.mean_period_ms is None:
                raise ConfigError("periodic repeat needs a period")


@dataclass(frozen=True)
class TimerCondition:
    not_before_ms: float = 0.0
    end_delay_ms: Optional[float] = None  # window closes this long after it opens


@dataclass(frozen=True)
class CompletionCondition:
    action_ids: tuple[str, ...]


@dataclass(frozen=True)
class SensorCondition:
    cond_id: str
    sensor_name: str
    roots: tuple[str, ...]          # ordered "host:port" failover list
    node_scope: str                 # "ALL:<port>" or "<host>:<port>"
    period_ms: float
    sensor_agg: AggregateOp
    hist_size: int
    hist_agg: AggregateOp
    comparator: Optional[str] = None
    rhs_const: Optional[float] = None
    secondary_id: Optional[str] = None
    scaling_factor: float = 1.0
    is_secondary: bool = False

    def scope_port(self) -> int:
        return int(self.node_scope.rsplit(":", 1)[1])

    def scope_host(self) -> str:
        return self.node_scope.rsplit(":", 1)[0]

    def to_query(self) -> SensorQuery:
        host = self.scope_host()
        return SensorQuery(self.scope_port(), self.sensor_name,
                           ALL_HOSTS if host == "ALL" else host,
                           self.sensor_agg, int(self.period_ms))


@dataclass(frozen=True)
class ActionSpec:
    kind: str                      # "startNode" | "killNode" | "actuator"
    actuator: str = ""             # actuator name for kind == "actuator"
    roots: tuple[str, ...] = ()    # query roots used for ALL-scope invocation
    node_target: str = ""          # "ALL:p" | "VARIABLE_host:p" | "host:p"
    num_to_start: int = 1
    rand_lifetime: bool = False
    mean_lifetime_ms: float = 0.0
    num_to_kill: int = 1

    @property
    def targets_variable_host(self) -> bool:
        return self.node_target.startswith("VARIABLE_host")


@dataclass(frozen=True)
class TriggerSpec:
    trigger_id: str
    name: str
    action: ActionSpec
    timers: tuple[TimerCondition, ...]
    completions: tuple[CompletionCondition, ...]
    sensors: tuple[SensorCondition, ...]
    repeat: RepeatPolicy

    def window(self) -> tuple[float, float]:
        """Timer window [open, close) with the end delay anchored at opening."""
        open_ms = max((t.not_before_ms for t in self.timers), default=0.0)
        delays = [t.end_delay_ms for t in self.timers if t.end_delay_ms is not None]
        close_ms = open_ms + min(delays) if delays else math.inf
        return open_ms, close_ms


# -- XML parsing -------------------------------------------------------------------

_ACTION_ATTRS = {"ID", "name", "timerName"}
_PARAM_ATTRS = {"numToStart", "numToKill", "distribution", "randLifetime",
                "meanLifetime", "lifetime", "commandType", "name", "hosts", "node"}
_REPEAT_ATTRS = {"distribution", "randPeriod", "meanPeriod", "period", "mode"}
_CONDITION_ATTRS = {"type", "value", "ID", "name", "hosts", "node", "period",
                    "sensorAgg", "histSize", "histAgg", "isSecondary",
                    "secondaryID", "scalingFactor", "operator", "timerName"}


def _check_attrs(elem: ET.Element, allowed: set, path: str) -> None:
    for key in elem.attrib:
        if key not in allowed:
            raise ConfigError(f"{path}: unknown attribute {key!r}")


def _parse_hosts(text: str) -> tuple[str, ...]:
    return tuple(h.strip() for h in text.split(",") if h.strip())


def _parse_condition(elem: ET.Element, path: str, sink: dict) -> None:
    _check_attrs(elem, _CONDITION_ATTRS, path)
    ctype = elem.get("type")
    if ctype == "timer":
        sink["timers"].append(TimerCondition(not_before_ms=float(elem.get("value", "0"))))
    elif ctype == "endDelay":
        sink["timers"].append(TimerCondition(end_delay_ms=float(elem.get("value", "0"))))
    elif ctype == "completion":
        ids = tuple(x.strip() for x in elem.get("value", "").split(",") if x.strip())
        if not ids:
            raise ConfigError(f"{path}: completion condition needs action ids")
        sink["completions"].append(CompletionCondition(ids))
    elif ctype == "sensor":
        if "sensorAgg" not in elem.attrib:
            raise ConfigError(f"{path}: sensor condition needs sensorAgg")
        hist_size = int(elem.get("histSize", "1"))
        if hist_size < 1:
            raise ConfigError(f"{path}: histSize must be >= 1")
        if hist_size > 1 and "histAgg" not in elem.attrib:
            raise ConfigError(f"{path}: histSize > 1 needs histAgg")
        try:
            sensor_agg = AggregateOp(elem.get("sensorAgg").upper())
            # any aggregate is the identity over a one-element history
            hist_agg = AggregateOp(elem.get("histAgg", "MAX").upper())
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        is_secondary = elem.get("isSecondary", "false").lower() == "true"
        operator = elem.get("operator")
        if not is_secondary and operator is None:
            raise ConfigError(f"{path}: gating sensor condition needs an operator")
        value = elem.get("value")
        secondary = elem.get("secondaryID")
        if not is_secondary and value is None and secondary is None:
            raise ConfigError(f"{path}: sensor condition needs value or secondaryID")
        if "node" not in elem.attrib or "hosts" not in elem.attrib:
            raise ConfigError(f"{path}: sensor condition needs hosts and node")
        sink["sensors"].append(SensorCondition(
            cond_id=elem.get("ID", f"{path}"),
            sensor_name=elem.get("name", ""),
            roots=_parse_hosts(elem.get("hosts", "")),
            node_scope=elem.get("node", ""),
            period_ms=float(elem.get("period", "60000")),
            sensor_agg=sensor_agg,
            hist_size=hist_size,
            hist_agg=hist_agg,
            comparator=operator,
            rhs_const=float(value) if value is not None else None,
            secondary_id=secondary,
            scaling_factor=float(elem.get("scalingFactor", "1")),
            is_secondary=is_secondary,
        ))
    else:
        raise ConfigError(f"{path}: unknown condition type {ctype!r}")


def _parse_action(elem: ET.Element, index: int) -> TriggerSpec:
    path = f"action[{index}]"
    _check_attrs(elem, _ACTION_ATTRS, path)
    trigger_id = elem.get("ID")
    name = elem.get("name")
    if not trigger_id or not name:
        raise ConfigError(f"{path}: ID and name are required")

    params = elem.find("params")
    params_attrs = dict(params.attrib) if params is not None else {}
    if params is not None:
        _check_attrs(params, _PARAM_ATTRS, f"{path}/params")

    if name == "startNode":
        action = ActionSpec(
            kind="startNode",
            num_to_start=int(params_attrs.get("numToStart", "1")),
            rand_lifetime=params_attrs.get("randLifetime", "false").lower() == "true",
            mean_lifetime_ms=float(params_attrs.get("meanLifetime", "0")),
        )
    elif name == "killNode":
        action = ActionSpec(kind="killNode",
                            num_to_kill=int(params_attrs.get("numToKill", "1")))
    elif params_attrs.get("commandType") == "actuator" or name == "EXECUTE":
        if params_attrs.get("commandType") != "actuator":
            raise ConfigError(f"{path}/params: EXECUTE requires commandType=\"actuator\"")
        action = ActionSpec(
            kind="actuator",
            actuator=params_attrs.get("name", ""),
            roots=_parse_hosts(params_attrs.get("hosts", "")),
            node_target=params_attrs.get("node", ""),
        )
        if not action.actuator or not action.node_target:
            raise ConfigError(f"{path}/params: actuator actions need name and node")
    else:
        raise ConfigError(f"{path}: unknown action name {name!r}")

    repeat_elem = elem.find("repeat")
    if repeat_elem is None:
        repeat = RepeatPolicy(RepeatMode.EVERY_TRANSITION)
    else:
        _check_attrs(repeat_elem, _REPEAT_ATTRS, f"{path}/repeat")
        mode_attr = repeat_elem.get("mode")
        if repeat_elem.get("randPeriod", "false").lower() == "true":
            if repeat_elem.get("distribution") != "exponential":
                raise ConfigError(f"{path}/repeat: only exponential randPeriod is supported")
            mode = RepeatMode(mode_attr) if mode_attr else RepeatMode.PERIODIC_EVERY_TRUE
            repeat = RepeatPolicy(mode, mean_period_ms=float(repeat_elem.get("meanPeriod")))
        elif "period" in repeat_elem.attrib:
            mode = RepeatMode(mode_attr) if mode_attr else RepeatMode.PERIODIC_EVERY_TRUE
            repeat = RepeatPolicy(mode, period_ms=float(repeat_elem.get("period")))
        elif mode_attr:
            repeat = RepeatPolicy(RepeatMode(mode_attr))
        else:
            raise ConfigError(f"{path}/repeat: needs a period or a mode")

    conditions = elem.find("conditions")
    if conditions is None or len(conditions) == 0:
        raise ConfigError(f"{path}: a trigger needs at least one condition")
    sink = {"timers": [], "completions": [], "sensors": []}
    for ci, cond in enumerate(conditions, start=1):
        if cond.tag != "condition":
            raise ConfigError(f"{path}/conditions: unexpected element {cond.tag!r}")
        _parse_condition(cond, f"{path}/conditions/condition[{ci}]", sink)

    spec = TriggerSpec(
        trigger_id=trigger_id, name=name, action=action,
        timers=tuple(sink["timers"]),
        completions=tuple(sink["completions"]),
        sensors=tuple(sink["sensors"]),
        repeat=repeat,
    )
    if action.targets_variable_host:
        gating = [s for s in spec.sensors if not s.is_secondary]
        ok = any(s.sensor_agg in (AggregateOp.MAX, AggregateOp.MIN)
                 and s.scope_host() == "ALL" for s in gating)
        if not ok:
            raise ConfigError(
                f"{path}: VARIABLE_host target needs a gating MAX/MIN sensor "
                f"condition over ALL nodes")
    return spec


def parse_config(xml_text: str) -> list[TriggerSpec]:
    """Parse a trigger configuration document (any root element wrapping
    one or more action elements)."""
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise ConfigError(f"malformed XML: {exc}") from None
    actions = [root] if root.tag == "action" else list(root)
    specs = []
    for i, elem in enumerate(actions, start=1):
        if elem.tag != "action":
            raise ConfigError(f"element[{i}]: expected action, got {elem.tag!r}")
        specs.append(_parse_action(elem, i))
    ids = [s.trigger_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate action IDs")
    return specs


# -- repeat policy state machine ------------------------------------------------------


class RepeatState:
    """Tracks one trigger's repeat policy across evaluation ticks."""

    def __init__(self, policy: RepeatPolicy, rng: random.Random):
        self.policy = policy
        self.rng = rng
        self.prev = False
        self.fired_ever = False
        self.exhausted = False   # periodic-first-true stops after one interval
        self.next_fire: Optional[float] = None

    def _sample_period(self) -> float:
        if self.policy.mean_period_ms is not None:
            return self.rng.expovariate(1.0 / self.policy.mean_period_ms)
        return self.policy.period_ms

    def decide(self, cur: bool, now_ms: float) -> int:
        """Number of firings due at this tick given the current condition state."""
        mode = self.policy.mode
        fires = 0
        rising = cur and not self.prev
        if mode == RepeatMode.FIRST_TRANSITION:
            if rising and not self.fired_ever:
                fires = 1
        elif mode == RepeatMode.EVERY_TRANSITION:
            if rising:
                fires = 1
        else:
            if rising:
                if not self.exhausted:
                    fires += 1
                    self.next_fire = now_ms + self._sample_period()
            elif cur and not self.exhausted:
                while self.next_fire is not None and now_ms >= self.next_fire:
                    fires += 1
                    self.next_fire += self._sample_period()
            elif not cur and self.prev:
                self.next_fire = None
                if mode == RepeatMode.PERIODIC_FIRST_TRUE and self.fired_ever:
                    self.exhausted = True
        if fires:
            self.fired_ever = True
        self.prev = cur
        return fires


def repeat_decision(state: RepeatState, cur: bool, now_ms: float) -> int:
    return state.decide(cur, now_ms)


# -- engine dependencies ------------------------------------------------------------


class EngineClock(Protocol):
    def now_ms(self) -> float: ...

    def call_later(self, delay_ms: float, fn: Callable[[], None]) -> object: ...

    def cancel(self, handle: object) -> None: ...


class QueryClient(Protocol):
    """Continuous/snapshot queries against an ordered list of query roots."""

    def subscribe(self, roots: Sequence[str], query: SensorQuery,
                  on_block: Callable[[list], None]) -> object:
        """Start a continuous query; on_block receives result tuples per epoch.
        The client fails over to later roots when the current one goes silent.
        Returns a handle with a close() method."""
        ...

    def invoke_all(self, roots: Sequence[str], port: int, actuator: str,
                   cb: Callable[[list], None]) -> None:
        """Broadcast an actuator invocation through a query root."""
        ...

    def invoke_direct(self, host: str, port: int, actuator: str,
                      cb: Callable[[list], None]) -> None: ...


class ProcessClient(Protocol):
    """Start/kill application instances (the churn backend)."""

    def start_instances(self, count: int, cb: Callable[[list[str]], None]) -> None: ...

    def kill_instance(self, target: str, cb: Callable[[bool], None]) -> None: ...


# -- engine -----------------------------------------------------------------------


@dataclass
class FiringRecord:
    timestamp_ms: float
    trigger_id: str
    action: str
    target: str
    status: str


class _SensorState:
    def __init__(self, cond: SensorCondition):
        self.cond = cond
        self.history: list[float] = []
        self.last_source: Optional[str] = None
        self.received = 0
        self.handle = None

    def push(self, rows: list) -> None:
        if not rows:
            return
        value = parse_number(rows[0].data)
        if value is None:
            return
        self.received += 1
        self.history.append(value)
        if len(self.history) > self.cond.hist_size:
            del self.history[:len(self.history) - self.cond.hist_size]
        self.last_source = rows[0].source

    def current_value(self) -> Optional[float]:
        if not self.history:
            return None
        agg = central_aggregate(self.cond.hist_agg, [repr(v) for v in self.history])
        return float(agg) if agg is not None else None


class TriggerEngine:
    """Evaluates triggers on a fixed tick, fetching sensor conditions on their
    own periods through continuous queries."""

    def __init__(self, specs: Sequence[TriggerSpec], clock: EngineClock,
                 client: QueryClient, processes: Optional[ProcessClient] = None,
                 seed: int = 0):
        self.specs = list(specs)
        self.clock = clock
        self.client = client
        self.processes = processes
        self.seed = seed
        self.transcript: list[FiringRecord] = []
        self.completed: set[str] = set()
        self.failed: set[str] = set()
        self._running = False
        self._start_ms = 0.0
        self._tick_handle = None
        self._repeat: dict[str, RepeatState] = {}
        self._sensors: dict[str, _SensorState] = {}
        self._by_cond_id: dict[str, _SensorState] = {}
        self._lifetime_rng = random.Random((seed << 1) ^ 0x5EED)

    # -- lifecycle

    def tick_ms(self) -> float:
        periods = [s.period_ms for spec in self.specs for s in spec.sensors]
        if not periods:
            return EVAL_TICK_FLOOR_MS
        tick = periods[0]
        for p in periods[1:]:
            tick = math.gcd(int(tick), int(p))
        return max(float(tick), EVAL_TICK_FLOOR_MS)

    def start(self) -> None:
        self._running = True
        self._start_ms = self.clock.now_ms()
        for spec in self.specs:
            self._repeat[spec.trigger_id] = RepeatState(
                spec.repeat, random.Random((self.seed << 3) ^ _stable_id(spec.trigger_id)))
            for cond in spec.sensors:
                key = f"{spec.trigger_id}/{cond.cond_id}"
                state = _SensorState(cond)
                self._sensors[key] = state
                if cond.cond_id:
                    self._by_cond_id[cond.cond_id] = state
                state.handle = self.client.subscribe(
                    cond.roots, cond.to_query(),
                    lambda rows, st=state: st.push(rows))
        self._schedule_tick()

    def stop(self) -> None:
        self._running = False
        if self._tick_handle is not None:
            self.clock.cancel(self._tick_handle)
        for state in self._sensors.values():
            if state.handle is not None:
                state.handle.close()

    def horizon_ms(self) -> Optional[float]:
        """Absolute time after which no trigger can fire again (all windows shut)."""
        closes = []
        for spec in self.specs:
            _, close = spec.window()
            if math.isinf(close) :
                return None
            closes.append(close)
        return self._start_ms + max(closes) if closes else self._start_ms

    # -- evaluation

    def _schedule_tick(self) -> None:
        if not self._running:
            return
        self._tick_handle = self.clock.call_later(self.tick_ms(), self._tick)

    def _tick(self) -> None:
        if not self._running:
            return
        now = self.clock.now_ms()
        for spec in self.specs:
            self._evaluate(spec, now)
        self._schedule_tick()

    def _evaluate(self, spec: TriggerSpec, now: float) -> None:
        rel = now - self._start_ms
        open_ms, close_ms = spec.window()
        ok = open_ms <= rel < close_ms
        fired_node = None
        if ok:
            for comp in spec.completions:
                if not all(a in self.completed for a in comp.action_ids):
                    ok = False
                    break
        if ok:
            for cond in spec.sensors:
                if cond.is_secondary:
                    continue
                state = self._sensors[f"{spec.trigger_id}/{cond.cond_id}"]
                value = state.current_value()
                if value is None:
                    ok = False
                    break
                rhs = cond.rhs_const
                if cond.secondary_id is not None:
                    sec = self._by_cond_id.get(cond.secondary_id)
                    sec_value = sec.current_value() if sec else None
                    if sec_value is None:
                        ok = False
                        break
                    rhs = sec_value * cond.scaling_factor
                if not compare_values(repr(value), cond.comparator, repr(rhs)):
                    ok = False
                    break
                if cond.sensor_agg in (AggregateOp.MAX, AggregateOp.MIN) \
                        and cond.scope_host() == "ALL":
                    fired_node = state.last_source
        fires = self._repeat[spec.trigger_id].decide(ok, now)
        for _ in range(fires):
            self.execute_action(spec, fired_node)

    # -- actions

    def _record(self, spec: TriggerSpec, target: str, status: str) -> None:
        self.transcript.append(FiringRecord(
            self.clock.now_ms(), spec.trigger_id, spec.name, target, status))
        if status == "OK":
            self.completed.add(spec.trigger_id)
        else:
            self.failed.add(spec.trigger_id)

    def execute_action(self, spec: TriggerSpec, fired_node: Optional[str]) -> None:
        action = spec.action
        if action.kind == "startNode":
            if self.processes is None:
                self._record(spec, "startNode", "ERROR no process backend")
                return

            def started(instances: list[str]) -> None:
                self._record(spec, f"start:{len(instances)}",
                             "OK" if instances else "ERROR")
                if action.rand_lifetime and action.mean_lifetime_ms > 0:
                    for inst in instances:
                        life = self._lifetime_rng.expovariate(
                            1.0 / action.mean_lifetime_ms)
                        self.clock.call_later(life, lambda i=inst: self._kill(spec, i))

            self.processes.start_instances(action.num_to_start, started)
        elif action.kind == "killNode":
            if self.processes is None:
                self._record(spec, "killNode", "ERROR no process backend")
                return
            for _ in range(action.num_to_kill):
                self.processes.kill_instance("", lambda ok: self._record(
                    spec, "kill", "OK" if ok else "ERROR"))
        else:
            self._invoke_actuator(spec, fired_node)

    def _kill(self, spec: TriggerSpec, instance: str) -> None:
        self.processes.kill_instance(instance, lambda ok: self.transcript.append(
            FiringRecord(self.clock.now_ms(), spec.trigger_id, "lifetimeKill",
                         instance, "OK" if ok else "ERROR")))

    def _invoke_actuator(self, spec: TriggerSpec, fired_node: Optional[str]) -> None:
        action = spec.action
        target = action.node_target
        host, _, port_text = target.rpartition(":")
        port = int(port_text)

        def done(rows: list) -> None:
            ok = bool(rows) and not any("ERROR" in r.data for r in rows)
            self._record(spec, target if not action.targets_variable_host
                         else f"{fired_node}", "OK" if ok else "ERROR")

        if host == "ALL":
            self.client.invoke_all(action.roots, port, action.actuator, done)
        elif action.targets_variable_host:
            if fired_node is None:
                self._record(spec, "VARIABLE_host", "ERROR no extremal node bound")
                return
            node_host = fired_node.rsplit(":", 1)[0]
            self.client.invoke_direct(node_host, port, action.actuator, done)
        else:
            self.client.invoke_direct(host, port, action.actuator, done)

    # -- restart semantics

    def restart(self) -> None:
        """Crash-restart: re-read config state, histories and completions lost."""
        self.stop()
        self.transcript = list(self.transcript)  # transcript survives on disk only
        self.completed = set()
        self.failed = set()
        self._sensors.clear()
        self._by_cond_id.clear()
        self._repeat.clear()
        self.start()


def _stable_id(text: str) -> int:
    acc = 0
    for ch in text:
        acc = (acc * 131 + ord(ch)) & 0x7FFFFFFF
    return acc


def transcript_to_csv(records: Sequence[FiringRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["timestamp_ms", "trigger_id", "action", "target", "status"])
    for r in records:
        writer.writerow([f"{r.timestamp_ms:.0f}", r.trigger_id, r.action,
                         r.target, r.status])
    return buf.getvalue()
