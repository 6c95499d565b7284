"""Command-line entry point: run simulations, serve live nodes, issue queries,
drive the trigger engine, and aggregate experiment results."""

from __future__ import annotations

import argparse
import asyncio
import csv
import json
import logging
import os
import statistics
import sys
from typing import Optional

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _setup_logging() -> None:
    level = os.environ.get("ACME_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s %(message)s")


def cmd_sim(args) -> int:
    from .simnet.scenario import ScenarioError, load_scenario, run_scenario

    try:
        scenario = load_scenario(args.scenario)
        written = run_scenario(scenario, args.seed, args.out)
    except (ScenarioError, FileNotFoundError, ValueError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for path in written:
        print(path)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .realmode import NodeConfig, NodeRuntime
    from .service import create_node_app

    try:
        with open(args.config, encoding="utf-8") as fh:
            config = NodeConfig.from_dict(json.load(fh), name=args.name)
    except (OSError, KeyError, ValueError, StopIteration) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.listen:
        config.host = args.listen

    async def serve() -> None:
        runtime = NodeRuntime(config)
        await runtime.start()
        server = uvicorn.Server(uvicorn.Config(
            create_node_app(runtime), host=config.host, port=config.sensor_port,
            log_level="warning", lifespan="off"))
        try:
            await server.serve()
        finally:
            await runtime.stop()

    try:
        asyncio.run(serve())
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_query(args) -> int:
    from .query import QueryParseError, parse_query
    from .realmode.client import snapshot_with_failover

    text = args.query
    if not text.startswith("/"):
        text = "/ising?" + text
    try:
        query = parse_query(text)
    except QueryParseError as exc:
        print(f"bad query: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    roots = [r.strip() for r in args.roots.split(",") if r.strip()]
    if not roots:
        print("at least one root is required (--roots)", file=sys.stderr)
        return EXIT_CONFIG

    if query.is_snapshot():
        try:
            rows = asyncio.run(snapshot_with_failover(roots, query,
                                                      timeout_s=args.timeout))
        except ConnectionError as exc:
            print(f"query failed: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        from .aggregate import tuples_to_csv
        sys.stdout.write(tuples_to_csv(rows))
        return EXIT_OK

    async def stream() -> int:
        import httpx

        from .realmode.client import root_url
        last_error: Optional[Exception] = None
        for root in roots:
            try:
                async with httpx.AsyncClient(timeout=args.timeout) as client:
                    async with client.stream("GET", root_url(root, query)) as resp:
                        if resp.status_code != 200:
                            last_error = RuntimeError(f"{root}: {resp.status_code}")
                            continue
                        async for line in resp.aiter_lines():
                            print(line, flush=True)
            except httpx.HTTPError as exc:
                last_error = exc
        print(f"stream ended: {last_error}", file=sys.stderr)
        return EXIT_RUNTIME

    try:
        return asyncio.run(stream())
    except KeyboardInterrupt:
        return EXIT_OK


def cmd_trigger(args) -> int:
    from .entrie import ConfigError, TriggerEngine, parse_config, transcript_to_csv
    from .realmode.client import HttpQueryClient
    from .realmode.runtime import AsyncClock
    from .sensact import LocalProcessBackend

    try:
        with open(args.config, encoding="utf-8") as fh:
            specs = parse_config(fh.read())
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    backend = LocalProcessBackend()

    class _Processes:
        def start_instances(self, count, cb):
            cb(backend.start(count))

        def kill_instance(self, target, cb):
            cb(backend.kill(target))

    async def run() -> None:
        clock = AsyncClock()
        engine = TriggerEngine(specs, clock, HttpQueryClient(), _Processes(),
                               seed=args.seed or 0)
        engine.start()
        horizon = engine.horizon_ms()
        if args.horizon_s is not None:
            deadline = clock.now_ms() + args.horizon_s * 1000.0
            horizon = min(horizon, deadline) if horizon is not None else deadline
        try:
            while horizon is None or clock.now_ms() < horizon:
                await asyncio.sleep(0.2)
        finally:
            engine.stop()
            backend.shutdown()
            out = args.out or "transcript.csv"
            with open(out, "w", encoding="utf-8", newline="") as fh:
                fh.write(transcript_to_csv(engine.transcript))
            print(out)

    try:
        asyncio.run(run())
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def _read_rows(path: str) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_report(args) -> int:
    """Aggregate raw experiment tables into plot-ready files."""
    results = args.results_dir
    out_dir = args.out or results
    os.makedirs(out_dir, exist_ok=True)
    written = []

    raw_path = os.path.join(results, "latency_raw.csv")
    if os.path.exists(raw_path):
        rows = _read_rows(raw_path)
        groups: dict = {}
        for r in rows:
            key = (int(r["n"]), r["topology"], r["op"])
            groups.setdefault(key, []).append(float(r["latency_ms"]))
        sizes = sorted({k[0] for k in groups})
        combos = sorted({(k[1], k[2]) for k in groups})
        header = ["n"] + [f"{topo}_{op}_median_ms" for topo, op in combos]
        table = []
        for n in sizes:
            row = [n]
            for topo, op in combos:
                row.append(f"{statistics.median(groups[(n, topo, op)]):.3f}")
            table.append(row)
        path = os.path.join(out_dir, "report_latency.csv")
        _write(path, header, table)
        written.append(path)

    for raw_name, report_name, field in (("bytes_raw.csv", "report_bytes.csv",
                                          "app_bytes"),):
        raw_path = os.path.join(results, raw_name)
        if os.path.exists(raw_path):
            rows = _read_rows(raw_path)
            groups = {}
            for r in rows:
                groups[(int(r["n"]), r["topology"], r["op"])] = int(r[field])
            sizes = sorted({k[0] for k in groups})
            combos = sorted({(k[1], k[2]) for k in groups})
            header = ["n"] + [f"{topo}_{op}_bytes" for topo, op in combos]
            table = [[n] + [groups[(n, topo, op)] for topo, op in combos]
                     for n in sizes]
            path = os.path.join(out_dir, report_name)
            _write(path, header, table)
            written.append(path)

    loss_path = os.path.join(results, "loss.csv")
    if os.path.exists(loss_path):
        rows = _read_rows(loss_path)
        header = ["loss_probability_pct", "lossy_responses_pct", "mean_nodes_lost"]
        table = [[f"{float(r['p']) * 100:.2f}",
                  f"{float(r['lossy_fraction']) * 100:.1f}",
                  f"{float(r['mean_nodes_lost']):.2f}"] for r in rows]
        path = os.path.join(out_dir, "report_loss.csv")
        _write(path, header, table)
        written.append(path)

    if not written:
        print("no recognizable raw tables in the results directory", file=sys.stderr)
        return EXIT_CONFIG
    for path in written:
        print(path)
    return EXIT_OK


def _write(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acme",
        description="tree-overlay sensor aggregation stack and simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("sim", help="run a simulation scenario")
    sim.add_argument("--scenario", required=True)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", default="results")
    sim.set_defaults(fn=cmd_sim)

    serve = sub.add_parser("serve", help="run one live node")
    serve.add_argument("--config", required=True, help="node config JSON")
    serve.add_argument("--name", default=None, help="node name within the config")
    serve.add_argument("--listen", default=None, help="bind address override")
    serve.set_defaults(fn=cmd_serve)

    query = sub.add_parser("query", help="issue a query against a live root")
    query.add_argument("--roots", required=True,
                       help="comma-separated host:port failover list")
    query.add_argument("--timeout", type=float, default=30.0)
    query.add_argument("query", help="query string, e.g. 'port=9000&sensor=load&op=AVG&epoch=0'")
    query.set_defaults(fn=cmd_query)

    trigger = sub.add_parser("trigger", help="run the trigger engine")
    trigger.add_argument("--config", required=True, help="trigger XML path")
    trigger.add_argument("--roots", default="", help="default query roots")
    trigger.add_argument("--seed", type=int, default=0)
    trigger.add_argument("--horizon-s", type=float, default=None)
    trigger.add_argument("--out", default=None, help="transcript CSV path")
    trigger.set_defaults(fn=cmd_trigger)

    report = sub.add_parser("report", help="aggregate raw result tables")
    report.add_argument("results_dir")
    report.add_argument("--out", default=None)
    report.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        logging.getLogger(__name__).exception("unhandled failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
