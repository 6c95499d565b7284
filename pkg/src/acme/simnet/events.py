"""Single-threaded event loop over a virtual millisecond clock.

Events run in nondecreasing virtual time; ties break by insertion order, which
makes every run a pure function of its inputs.
"""

from __future__ import annotations

import heapq
import itertools
from typing import Callable, Optional


class _Event:
    __slots__ = ("time", "seq", "fn")

    def __init__(self, time: float, seq: int, fn: Optional[Callable[[], None]]):
        self.time = time
        self.seq = seq
        self.fn = fn

    def __lt__(self, other):
        return (self.time, self.seq) < (other.time, other.seq)


class SimClock:
    def __init__(self, start_ms: float = 0.0):
        self._now = start_ms
        self._heap: list[_Event] = []
        self._seq = itertools.count()
        self.processed = 0

    def now_ms(self) -> float:
        return self._now

    def call_at(self, when_ms: float, fn: Callable[[], None]) -> _Event:
        if when_ms < self._now:
            raise ValueError(f"cannot schedule into the past ({when_ms} < {self._now})")
        ev = _Event(when_ms, next(self._seq), fn)
        heapq.heappush(self._heap, ev)
        return ev

    def call_later(self, delay_ms: float, fn: Callable[[], None]) -> _Event:
        return self.call_at(self._now + max(0.0, delay_ms), fn)

    def cancel(self, handle: _Event) -> None:
        handle.fn = None  # lazily skipped on pop

    def step(self) -> bool:
        """Run the next event; False when the queue is exhausted."""
        while self._heap:
            ev = heapq.heappop(self._heap)
            if ev.fn is None:
                continue
            self._now = ev.time
            fn, ev.fn = ev.fn, None
            self.processed += 1
            fn()
            return True
        return False

    def run(self, until_ms: Optional[float] = None,
            stop: Optional[Callable[[], bool]] = None) -> None:
        """Drain events, optionally bounded by a horizon or a stop predicate."""
        while self._heap:
            if stop is not None and stop():
                return
            nxt = self._heap[0]
            if nxt.fn is None:
                heapq.heappop(self._heap)
                continue
            if until_ms is not None and nxt.time > until_ms:
                self._now = until_ms
                return
            self.step()
        if until_ms is not None and self._now < until_ms:
            self._now = until_ms

    def pending(self) -> int:
        return sum(1 for ev in self._heap if ev.fn is not None)
