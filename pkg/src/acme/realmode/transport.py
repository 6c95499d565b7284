"""Framed TCP transport for overlay tree messages.

Wire format per frame: 4-byte big-endian length, then tree id (8 bytes),
direction (1 byte), and a JSON payload that carries the sender. Connections
between peers persist and are reused per edge.
"""

from __future__ import annotations

import asyncio
import json
import logging
from typing import Callable, Optional

from ..ids import NodeId
from ..qtree import decode_frame, encode_frame

logger = logging.getLogger(__name__)

FrameHandler = Callable[[NodeId, int, int, dict], None]


class OverlayTransport:
    """Accepts and sends framed tree messages for one node."""

    def __init__(self, host: str, port: int, on_frame: FrameHandler):
        self.host = host
        self.port = port
        self.on_frame = on_frame
        self._server: Optional[asyncio.AbstractServer] = None
        self._writers: dict[tuple[str, int], asyncio.StreamWriter] = {}
        self._locks: dict[tuple[str, int], asyncio.Lock] = {}

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._serve, self.host, self.port)

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        for writer in self._writers.values():
            writer.close()
        self._writers.clear()

    async def _serve(self, reader: asyncio.StreamReader,
                     writer: asyncio.StreamWriter) -> None:
        try:
            while True:
                header = await reader.readexactly(4)
                length = int.from_bytes(header, "big")
                body = await reader.readexactly(length)
                tree_id, direction, payload_bytes = decode_frame(body)
                envelope = json.loads(payload_bytes.decode("utf-8"))
                src = NodeId.parse(envelope["src"])
                self.on_frame(src, tree_id, direction, envelope["payload"])
        except (asyncio.IncompleteReadError, ConnectionResetError):
            pass
        finally:
            writer.close()

    async def send(self, addr: tuple[str, int], src: NodeId, tree_id: int,
                   direction: int, payload: dict) -> None:
        envelope = json.dumps({"src": str(src), "payload": payload}).encode("utf-8")
        frame = encode_frame(tree_id, direction, envelope)
        lock = self._locks.setdefault(addr, asyncio.Lock())
        async with lock:
            writer = self._writers.get(addr)
            for attempt in (0, 1):
                if writer is None:
                    try:
                        _, writer = await asyncio.open_connection(*addr)
                        self._writers[addr] = writer
                    except OSError as exc:
                        logger.warning("connect %s failed: %s", addr, exc)
                        return
                try:
                    writer.write(frame)
                    await writer.drain()
                    return
                except (ConnectionResetError, BrokenPipeError, OSError):
                    self._writers.pop(addr, None)
                    writer.close()
                    writer = None
        logger.warning("send to %s dropped after reconnect attempt", addr)
