"""asyncio TCP front end: one newline-delimited JSON message per line.

Connection readers and the heartbeat timer only enqueue work.  Each room has
one worker task that drains its queue and is the only code touching that
room's state.
"""

from __future__ import annotations

import asyncio
import itertools
import logging
from typing import Optional

from .protocol import ProtocolError, decode, encode
from .service import Outbox, SignalingService

log = logging.getLogger(__name__)

_TICK = object()


class SignalingServer:
    def __init__(self, service: SignalingService, host: str = "127.0.0.1", port: int = 7400):
        self.service = service
        self.host = host
        self.port = port
        self.writers: dict[str, asyncio.StreamWriter] = {}
        self.queues: dict[str, asyncio.Queue] = {}
        self.workers: dict[str, asyncio.Task] = {}
        self._ids = itertools.count(1)
        self._server: Optional[asyncio.base_events.Server] = None
        self._heartbeat: Optional[asyncio.Task] = None

    # ------------------------------------------------------------ lifecycle

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._on_connect, self.host, self.port)
        sock = self._server.sockets[0].getsockname()
        self.port = sock[1]
        self._heartbeat = asyncio.create_task(self._heartbeat_loop())
        log.info("listening on %s:%s", self.host, self.port)

    async def serve_forever(self) -> None:
        await self.start()
        async with self._server:
            await self._server.serve_forever()

    async def stop(self) -> None:
        if self._heartbeat:
            self._heartbeat.cancel()
        for task in self.workers.values():
            task.cancel()
        tasks = list(self.workers.values()) + ([self._heartbeat] if self._heartbeat else [])
        await asyncio.gather(*tasks, return_exceptions=True)
        for w in list(self.writers.values()):
            w.close()
        if self._server:
            self._server.close()
            await self._server.wait_closed()

    # ------------------------------------------------------------ plumbing

    def _queue(self, room_id: str) -> asyncio.Queue:
        q = self.queues.get(room_id)
        if q is None:
            q = self.queues[room_id] = asyncio.Queue()
            self.workers[room_id] = asyncio.create_task(self._worker(room_id, q))
        return q

    async def _worker(self, room_id: str, q: asyncio.Queue) -> None:
        while True:
            item = await q.get()
            try:
                if item is _TICK:
                    out = self.service.heartbeat_tick(room_id)
                else:
                    conn_id, msg = item
                    out = self.service.handle(conn_id, msg)
                await self._dispatch(out)
            except Exception:  # keep the room alive; the bug is in the log
                log.exception("room %s worker failed on %r", room_id, item)
            finally:
                q.task_done()

    async def _dispatch(self, out: Outbox) -> None:
        for conn_id, msg in out:
            w = self.writers.get(conn_id)
            if w is None or w.is_closing():
                continue
            w.write(encode(msg))
        for w in {self.writers[c] for c, _ in out if c in self.writers}:
            try:
                await w.drain()
            except ConnectionError:
                pass

    async def _heartbeat_loop(self) -> None:
        interval = self.service.heartbeat.interval
        while True:
            await asyncio.sleep(interval)
            for room_id in list(self.service.registry.rooms):
                self._queue(room_id).put_nowait(_TICK)

    async def _on_connect(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        conn_id = f"c{next(self._ids)}"
        self.writers[conn_id] = writer
        self.service.connect(conn_id)
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                if not line.strip():
                    continue
                try:
                    msg = decode(line)
                except ProtocolError as exc:
                    await self._dispatch(self.service.reject(conn_id, exc))
                    continue
                self._queue(msg.room_id).put_nowait((conn_id, msg))
        except ConnectionError:
            pass
        finally:
            # Room state is untouched: a vanished peer is found by the heartbeat.
            self.writers.pop(conn_id, None)
            self.service.disconnect(conn_id)
            writer.close()


def run_server(service: SignalingService, host: str, port: int) -> None:
    asyncio.run(SignalingServer(service, host, port).serve_forever())
