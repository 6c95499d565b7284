"""HTTP surface of a live node: the sensor/actuator server, and on the query
root the aggregation endpoint with snapshot and streaming responses.

Sensor and actuator responses are plain-text CSV, matching the simulator's
conventions; health and introspection endpoints speak JSON.
"""

from __future__ import annotations

import asyncio
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import PlainTextResponse, StreamingResponse
from pydantic import BaseModel

from .aggregate import tuples_to_csv
from .query import ALL_HOSTS, QueryParseError, parse_query


class HealthResponse(BaseModel):
    status: str
    node: str


class NodeInfoResponse(BaseModel):
    name: str
    node_id: str
    sensor_port: int
    overlay_port: int
    is_root: bool
    tree_ids: list[int]
    sensors: list[str]
    peers: list[str]


class TreeStatsResponse(BaseModel):
    tree_id: int
    members: int
    avg_depth: float
    max_depth: int
    depth_histogram: dict[int, int]


def create_node_app(runtime) -> FastAPI:
    """Build the FastAPI app for one node runtime.

    Every node serves its sensors and actuators; the root additionally serves
    the aggregation endpoint. Continuous queries stream one CSV block per
    epoch over the open connection, blocks separated by a blank line.
    """
    app = FastAPI(title=f"node {runtime.name}", docs_url=None, redoc_url=None)

    @app.get("/healthz", response_model=HealthResponse)
    async def healthz():
        return HealthResponse(status="ok", node=runtime.name)

    @app.get("/admin/info", response_model=NodeInfoResponse)
    async def info():
        return NodeInfoResponse(
            name=runtime.name,
            node_id=str(runtime.node_id),
            sensor_port=runtime.config.sensor_port,
            overlay_port=runtime.config.overlay_port,
            is_root=runtime.is_root,
            tree_ids=sorted(runtime.engine.views),
            sensors=runtime.core.names(),
            peers=sorted(p.name for p in runtime.config.peers),
        )

    @app.get("/admin/tree/{tree_id}", response_model=TreeStatsResponse)
    async def tree_stats_endpoint(tree_id: int):
        stats = runtime.tree_stats(tree_id)
        if stats is None:
            return PlainTextResponse(f"unknown tree {tree_id}\n", status_code=404)
        return TreeStatsResponse(tree_id=tree_id, **stats)

    @app.get("/ising")
    async def ising(request: Request):
        if not runtime.is_root:
            return PlainTextResponse("not an aggregation root\n", status_code=403)
        try:
            query = parse_query("/ising?" + str(request.url.query))
        except QueryParseError as exc:
            return PlainTextResponse(f"bad query: {exc}\n", status_code=400)
        if query.is_snapshot() or query.host_scope != ALL_HOSTS:
            rows = await runtime.run_snapshot(query)
            return PlainTextResponse(tuples_to_csv(rows))

        queue: asyncio.Queue = asyncio.Queue()
        qid = runtime.register_stream(query, queue)

        async def stream():
            try:
                while True:
                    rows = await queue.get()
                    yield tuples_to_csv(rows) + "\n"
            finally:
                runtime.cancel_stream(qid)

        return StreamingResponse(stream(), media_type="text/plain")

    @app.get("/{sensor_path:path}")
    async def sensor(sensor_path: str, request: Request):
        args = dict(request.query_params)
        status, text = runtime.core.serve(sensor_path.strip("/"), args)
        return PlainTextResponse(text, status_code=status)

    return app
