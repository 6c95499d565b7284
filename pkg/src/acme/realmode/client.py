"""HTTP clients for the live stack: continuous query subscriptions with root
failover (the trigger engine's QueryClient) and one-shot query helpers."""

from __future__ import annotations

import asyncio
import logging
from typing import Callable, Optional, Sequence

import httpx

from ..aggregate import ResultTuple, tuples_from_csv
from ..query import SensorQuery

logger = logging.getLogger(__name__)


def root_url(root: str, query: SensorQuery) -> str:
    return f"http://{root}" + query.to_url()


async def snapshot_with_failover(roots: Sequence[str], query: SensorQuery,
                                 timeout_s: float = 30.0) -> list[ResultTuple]:
    """Run a snapshot against the first root that answers."""
    last_error: Optional[Exception] = None
    async with httpx.AsyncClient(timeout=timeout_s) as client:
        for root in roots:
            try:
                resp = await client.get(root_url(root, query))
                if resp.status_code == 200:
                    return tuples_from_csv(resp.text)
                last_error = RuntimeError(f"{root} answered {resp.status_code}: "
                                          f"{resp.text.strip()}")
            except httpx.HTTPError as exc:
                last_error = exc
    raise ConnectionError(f"all roots failed: {last_error}")


class _HttpSubscription:
    def __init__(self, roots: Sequence[str], query: SensorQuery, on_block: Callable):
        self.roots = list(roots)
        self.query = query
        self.on_block = on_block
        self.task = asyncio.ensure_future(self._run())

    async def _run(self) -> None:
        index = 0
        read_timeout = (self.query.epoch_ms or 1000) / 1000.0 * 1.5 + 2.0
        while True:
            root = self.roots[index % len(self.roots)]
            try:
                timeout = httpx.Timeout(5.0, read=read_timeout)
                async with httpx.AsyncClient(timeout=timeout) as client:
                    async with client.stream("GET", root_url(root, self.query)) as resp:
                        if resp.status_code != 200:
                            raise httpx.HTTPError(f"status {resp.status_code}")
                        buffer: list[str] = []
                        async for line in resp.aiter_lines():
                            if line == "":
                                if buffer:
                                    self.on_block(tuples_from_csv("\n".join(buffer)))
                                    buffer = []
                            else:
                                buffer.append(line)
            except asyncio.CancelledError:
                return
            except (httpx.HTTPError, OSError) as exc:
                logger.info("query root %s failed (%s); trying next", root, exc)
                index += 1
                await asyncio.sleep(0.05)

    def close(self) -> None:
        self.task.cancel()


class HttpQueryClient:
    """QueryClient over HTTP for the trigger engine."""

    def subscribe(self, roots, query, on_block):
        return _HttpSubscription(roots, query, on_block)

    def invoke_all(self, roots, port, actuator, cb):
        async def run():
            from ..aggregate import AggregateOp
            query = SensorQuery(port, actuator, op=AggregateOp.VALUE, epoch_ms=0)
            try:
                cb(await snapshot_with_failover(roots, query))
            except ConnectionError:
                cb([])

        asyncio.ensure_future(run())

    def invoke_direct(self, host, port, actuator, cb):
        async def run():
            from ..sensact import split_sensor_name
            name, args = split_sensor_name(actuator)
            try:
                async with httpx.AsyncClient(timeout=10.0) as client:
                    resp = await client.get(f"http://{host}:{port}/{name}", params=args)
                rows = [ResultTuple("", 0, line)
                        for line in resp.text.splitlines() if line] \
                    if resp.status_code == 200 else []
            except httpx.HTTPError:
                rows = []
            cb(rows)

        asyncio.ensure_future(run())
