"""Sensors and actuators behind one HTTP-style interface.

A sensor server maps names to handlers that return rows of untyped CSV; an
actuator is just a sensor whose handler causes a side effect and returns an
acknowledgement row. The same core serves the live FastAPI app and the
simulator's virtual hosts, so both modes expose identical request/response
conventions.
"""

from __future__ import annotations

import csv
import io
import os
import subprocess
import sys
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence
from urllib.parse import parse_qsl, urlsplit

OK = "OK"
ERROR = "ERROR"

# handler(args) -> CSV text; raise SensorFailure to signal a handler fault
SensorHandler = Callable[[dict], str]


class SensorFailure(Exception):
    """Handler-level failure; surfaces as HTTP 500 with the reason."""


@dataclass(frozen=True)
class ActuatorResult:
    status: str
    detail: str

    def to_csv(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow([self.status, self.detail])
        return buf.getvalue()


class SensorServerCore:
    """Name-to-handler dispatch shared by the live HTTP server and the simulator."""

    def __init__(self, hostname: str):
        self.hostname = hostname
        self._handlers: dict[str, SensorHandler] = {}

    def register(self, name: str, handler: SensorHandler) -> None:
        if name in self._handlers:
            raise ValueError(f"sensor {name!r} already registered")
        self._handlers[name] = handler

    def names(self) -> list[str]:
        return sorted(self._handlers)

    def serve(self, name: str, args: dict) -> tuple[int, str]:
        handler = self._handlers.get(name)
        if handler is None:
            return 404, f"unknown sensor {name!r}\n"
        try:
            return 200, handler(args)
        except SensorFailure as exc:
            return 500, f"{exc}\n"
        except Exception as exc:  # noqa: BLE001 - handler bugs become 500s
            return 500, f"internal error: {exc}\n"

    def serve_url(self, url: str) -> tuple[int, str]:
        """Dispatch a raw request URL: path names the sensor, query carries args."""
        split = urlsplit(url)
        name = split.path.strip("/")
        args = dict(parse_qsl(split.query, keep_blank_values=True))
        return self.serve(name, args)


def split_sensor_name(sensor: str) -> tuple[str, dict]:
    """Queries may embed handler arguments in the sensor name: `name?k=v`."""
    if "?" not in sensor:
        return sensor, {}
    name, _, qs = sensor.partition("?")
    return name, dict(parse_qsl(qs, keep_blank_values=True))


# -- actuator ledger ----------------------------------------------------------

class ActuatorLedger:
    """Append-only record of acknowledged actuator invocations.

    Every node keeps one for post-run audit; replaying it must reproduce the
    process-manager census.
    """

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self.records: list[tuple[int, str, str, str, str]] = []

    def record(self, timestamp_ms: int, actuator: str, args: dict,
               result: ActuatorResult) -> None:
        arg_text = "&".join(f"{k}={v}" for k, v in sorted(args.items()))
        entry = (timestamp_ms, actuator, arg_text, result.status, result.detail)
        self.records.append(entry)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                csv.writer(fh, lineterminator="\n").writerow(entry)


# -- built-in sensors ----------------------------------------------------------

def make_hostname_sensor(hostname: str) -> SensorHandler:
    return lambda args: hostname + "\n"


def make_load_sensor(provider: Callable[[], float]) -> SensorHandler:
    def handler(args):
        load = provider()
        if load < 0:
            raise SensorFailure("load provider returned a negative value")
        return f"{load}\n"

    return handler


def system_load() -> float:
    return os.getloadavg()[0]


class CounterBank:
    """Named monotone counters exposed as one sensor (`counter?name=...`)."""

    def __init__(self):
        self._counts: dict[str, int] = {}

    def bump(self, name: str, delta: int = 1) -> None:
        if delta < 0:
            raise ValueError("counters are monotone")
        self._counts[name] = self._counts.get(name, 0) + delta

    def value(self, name: str) -> int:
        return self._counts.get(name, 0)

    def handler(self, args: dict) -> str:
        return f"{self.value(args.get('name', 'default'))}\n"


class LogReaderSensor:
    """Tails a log file, returning only lines appended since the caller's cursor.

    Cursors are keyed by the caller-supplied `client` argument; a missing file
    reads as empty rather than an error.
    """

    def __init__(self, path: str):
        self.path = path
        self._cursors: dict[str, int] = {}

    def handler(self, args: dict) -> str:
        client = args.get("client", "default")
        offset = self._cursors.get(client, 0)
        try:
            with open(self.path, "rb") as fh:
                fh.seek(offset)
                chunk = fh.read()
                self._cursors[client] = fh.tell()
        except FileNotFoundError:
            return ""
        # only hand out complete lines; hold a trailing partial for next time
        if chunk and not chunk.endswith(b"\n"):
            cut = chunk.rfind(b"\n") + 1
            self._cursors[client] -= len(chunk) - cut
            chunk = chunk[:cut]
        return chunk.decode("utf-8", errors="replace")


class ValueStore:
    """Settable plain-value sensors, used by tests and live experiments."""

    def __init__(self):
        self._values: dict[str, str] = {}

    def set(self, name: str, value: str) -> None:
        self._values[name] = value

    def sensor(self, args: dict) -> str:
        return self._values.get(args.get("name", "default"), "0") + "\n"


# -- process management ---------------------------------------------------------

class ProcessBackend(Protocol):
    """What the start/kill/reboot actuators drive (real children or sim instances)."""

    def start(self, count: int, lifetime_ms: Optional[float]) -> list[str]: ...

    def kill(self, target: str) -> bool: ...

    def reboot(self, target: str) -> bool: ...

    def census(self) -> list[str]: ...


class LocalProcessBackend:
    """Child processes on the local machine through a simple command wrapper."""

    def __init__(self, command: Optional[Sequence[str]] = None):
        self.command = list(command) if command else [sys.executable, "-c",
                                                      "import time; time.sleep(3600)"]
        self._children: dict[str, subprocess.Popen] = {}
        self._counter = 0

    def start(self, count, lifetime_ms=None):
        started = []
        for _ in range(count):
            self._counter += 1
            inst = f"proc-{self._counter}"
            self._children[inst] = subprocess.Popen(
                self.command, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
            started.append(inst)
        return started

    def kill(self, target):
        proc = self._children.pop(target, None)
        if proc is None or proc.poll() is not None:
            return False
        proc.terminate()
        proc.wait(timeout=10)
        return True

    def reboot(self, target):
        if target not in self._children:
            return False
        self.kill(target)
        self._children[target] = subprocess.Popen(
            self.command, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        return True

    def census(self):
        return [k for k, p in self._children.items() if p.poll() is None]

    def shutdown(self):
        for name in list(self._children):
            self.kill(name)


def register_process_actuators(core: SensorServerCore, backend: ProcessBackend,
                               ledger: ActuatorLedger,
                               now_ms: Callable[[], float]) -> None:
    """Attach start/kill/reboot actuators for a process backend."""

    def wrap(name, fn):
        def handler(args):
            try:
                result = fn(args)
            except Exception as exc:  # noqa: BLE001
                result = ActuatorResult(ERROR, str(exc))
            ledger.record(int(now_ms()), name, args, result)
            return result.to_csv()

        core.register(name, handler)

    def start(args):
        count = int(args.get("count", 1))
        lifetime = float(args["lifetime_ms"]) if "lifetime_ms" in args else None
        started = backend.start(count, lifetime)
        return ActuatorResult(OK, f"started {len(started)}: {'+'.join(started)}")

    def kill(args):
        target = args.get("target", "")
        if backend.kill(target):
            return ActuatorResult(OK, f"killed {target}")
        return ActuatorResult(ERROR, f"unknown or dead target {target!r}")

    def reboot(args):
        target = args.get("target", "")
        if backend.reboot(target):
            return ActuatorResult(OK, f"rebooted {target}")
        return ActuatorResult(ERROR, f"cannot reboot {target!r}")

    wrap("start_node", start)
    wrap("kill_node", kill)
    wrap("reboot", reboot)


def register_value_actuator(core: SensorServerCore, store: ValueStore,
                            ledger: ActuatorLedger,
                            now_ms: Callable[[], float]) -> None:
    def handler(args):
        name = args.get("name", "default")
        value = args.get("value")
        if value is None:
            result = ActuatorResult(ERROR, "missing value argument")
        else:
            store.set(name, value)
            result = ActuatorResult(OK, f"{name}={value}")
        ledger.record(int(now_ms()), "set_value", args, result)
        return result.to_csv()

    core.register("set_value", handler)
