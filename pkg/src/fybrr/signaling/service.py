"""Transport-independent core of the signaling server.

:meth:`SignalingService.handle` takes one decoded request from a connection
and returns every message the server sends as a result, as
``(connection_id, WireMessage)`` pairs: the single terminal response to the
sender first, then pushes to other peers.  Mutations of room state go through
:meth:`SignalingService.apply`, which is also what log replay calls, so a
replayed room matches the live one field for field.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..errors import (
    FybrrError,
    InvalidParameterError,
    RoomNotFoundError,
    UnknownPeerError,
)
from ..model import PeerRecord, RoomState, ScoreParams
from ..overlay import (
    JoinOutcome,
    LeaveOutcome,
    PendingDeparture,
    RoomRegistry,
    begin_departure,
    complete_departure,
    join_peer,
    update_stats,
)
from ..scoring import initial_score, peer_slots
from .eventlog import EventLog
from .heartbeat import HeartbeatConfig, HeartbeatMonitor, WallClock
from .protocol import MsgType, WireMessage, error

log = logging.getLogger(__name__)

Outbox = list[tuple[str, WireMessage]]


@dataclass
class Connection:
    conn_id: str
    out_seq: int = 0
    last_in_seq: Optional[int] = None
    peers: set[tuple[str, str]] = field(default_factory=set)


def _positive(payload: dict, key: str) -> float:
    val = payload.get(key)
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not val > 0:
        raise InvalidParameterError(f"payload.{key} must be a positive number")
    return float(val)


class SignalingService:
    def __init__(
        self,
        params: Optional[ScoreParams] = None,
        heartbeat: Optional[HeartbeatConfig] = None,
        clock: Optional[Callable[[], float]] = None,
        log_dir=None,
        streaming_rate: float = 2.5,
        trust_client: bool = False,
    ):
        self.params = params or ScoreParams()
        self.heartbeat = heartbeat or HeartbeatConfig()
        self.clock = clock or WallClock()
        self.streaming_rate = streaming_rate
        self.trust_client = trust_client
        self.registry = RoomRegistry()
        self.log = EventLog(log_dir)
        self.monitor = HeartbeatMonitor(self.heartbeat)
        self.conns: dict[str, Connection] = {}
        self.peer_conn: dict[tuple[str, str], str] = {}
        # (room_id, peer_id, time) for every heartbeat-detected failure
        self.failures: list[tuple[str, str, float]] = []
        self._out: Outbox = []

    # ------------------------------------------------------------ state

    def apply(self, op: str, room_id: str, peer_id: str, payload: dict, between=None):
        """Apply one logged mutation.  ``between`` sees a departure mid-recovery."""
        if op == "ROOM_CREATE":
            params = ScoreParams(**payload["params"]) if "params" in payload else self.params
            src = PeerRecord(
                id=peer_id,
                upload_bandwidth=payload["upload_bandwidth"],
                score=payload["score"],
                slots=payload["slots"],
            )
            return self.registry.create_room(room_id, src, payload["streaming_rate"], params)
        room = self.registry.get(room_id)
        if op == "JOIN":
            rec = PeerRecord(
                id=peer_id,
                upload_bandwidth=payload["upload_bandwidth"],
                score=payload["score"],
                slots=payload["slots"],
            )
            return join_peer(room, rec)
        if op in ("LEAVE", "FAIL"):
            pending = begin_departure(room, peer_id, failed=(op == "FAIL"))
            if between is not None:
                between(room, pending)
            return pending, complete_departure(room, pending)
        if op == "STATS_UPDATE":
            return update_stats(room, peer_id, payload.get("latency"), payload.get("active_duration"))
        if op == "CLOSE":
            return self.registry.close_room(room_id)
        raise FybrrError(f"unknown op {op!r}")

    def commit(self, op, room_id, peer_id, payload, between=None):
        """Apply a mutation and append it to the event log."""
        result = self.apply(op, room_id, peer_id, payload, between)
        self.log.append(op, room_id, peer_id, payload)
        return result

    # ------------------------------------------------------------ messaging

    def connect(self, conn_id: str) -> None:
        self.conns.setdefault(conn_id, Connection(conn_id))

    def disconnect(self, conn_id: str) -> None:
        conn = self.conns.pop(conn_id, None)
        if conn is None:
            return
        for key in conn.peers:
            if self.peer_conn.get(key) == conn_id:
                del self.peer_conn[key]

    def _emit(self, conn_id: Optional[str], mtype: MsgType, room_id: str, peer_id: str, payload: dict):
        if conn_id is None or conn_id not in self.conns:
            return
        conn = self.conns[conn_id]
        conn.out_seq += 1
        self._out.append((conn_id, WireMessage(mtype, room_id, peer_id, payload, conn.out_seq)))

    def _push(self, room_id: str, peer_id: str, mtype: MsgType, payload: dict):
        self._emit(self.peer_conn.get((room_id, peer_id)), mtype, room_id, peer_id, payload)

    def _bind(self, conn_id: str, room_id: str, peer_id: str):
        self.peer_conn[(room_id, peer_id)] = conn_id
        self.conns[conn_id].peers.add((room_id, peer_id))
        self.monitor.track((room_id, peer_id), self.clock())

    def _drain(self) -> Outbox:
        out, self._out = self._out, []
        return out

    def handle(self, conn_id: str, msg: WireMessage) -> Outbox:
        self.connect(conn_id)
        conn = self.conns[conn_id]
        reply = lambda t, p: self._emit(conn_id, t, msg.room_id, msg.peer_id, {**p, "re": msg.seq})  # noqa: E731
        if conn.last_in_seq is not None and msg.seq <= conn.last_in_seq:
            reply(MsgType.ERROR, {"code": "bad-seq", "text": f"seq {msg.seq} not above {conn.last_in_seq}"})
            return self._drain()
        conn.last_in_seq = msg.seq
        handler = {
            MsgType.ROOM_CREATE: self._on_room_create,
            MsgType.JOIN: self._on_join,
            MsgType.LEAVE: self._on_leave,
            MsgType.STATS_UPDATE: self._on_stats,
            MsgType.PONG: self._on_pong,
        }.get(msg.type)
        try:
            if handler is None:
                raise FybrrError(f"{msg.type.value} is not a client request")
            handler(conn_id, msg, reply)
        except FybrrError as exc:
            reply(MsgType.ERROR, {"code": exc.code, "text": str(exc)})
        return self._drain()

    def reject(self, conn_id: str, exc: FybrrError) -> Outbox:
        """ERROR for a record that could not be decoded; no room is touched."""
        self.connect(conn_id)
        self._emit(conn_id, MsgType.ERROR, "", "", error(exc.code, str(exc)))
        return self._drain()

    def _create(self, conn_id, msg, reply):
        p = msg.payload
        bw = _positive(p, "upload_bandwidth")
        rate = _positive(p, "streaming_rate") if "streaming_rate" in p else self.streaming_rate
        payload = {
            "upload_bandwidth": bw,
            "streaming_rate": rate,
            "params": dataclasses.asdict(self.params),
            **self._client_or_server_scoring(p, bw, rate, self.params),
        }
        room = self.commit("ROOM_CREATE", msg.room_id, msg.peer_id, payload)
        self._bind(conn_id, msg.room_id, msg.peer_id)
        src = room.peers[room.source]
        reply(MsgType.ROOM_CREATED, {"source": room.source, "score": src.score, "slots": src.slots, "streaming_rate": rate})

    def _client_or_server_scoring(self, p: dict, bw: float, rate: float, params: ScoreParams) -> dict:
        if self.trust_client and "score" in p and "slots" in p:
            return {"score": float(p["score"]), "slots": int(p["slots"])}
        return {"score": initial_score(bw, rate, params), "slots": peer_slots(bw, rate, params)}

    def _on_room_create(self, conn_id, msg, reply):
        self._create(conn_id, msg, reply)

    def _on_join(self, conn_id, msg, reply):
        if msg.room_id not in self.registry:
            if msg.payload.get("create"):
                return self._create(conn_id, msg, reply)
            raise RoomNotFoundError(f"room {msg.room_id} not found")
        room = self.registry.get(msg.room_id)
        bw = _positive(msg.payload, "upload_bandwidth")
        payload = {"upload_bandwidth": bw, **self._client_or_server_scoring(msg.payload, bw, room.streaming_rate, room.params)}
        jo: JoinOutcome = self.commit("JOIN", msg.room_id, msg.peer_id, payload)
        self._bind(conn_id, msg.room_id, msg.peer_id)
        rec = room.peers[msg.peer_id]
        reply(
            MsgType.JOIN_ACK,
            {"parent_id": jo.assigned_parent, "aux": jo.aux_candidates, "score": rec.score, "slots": rec.slots},
        )
        if jo.displaced_child is not None:
            self._push(msg.room_id, jo.displaced_child, MsgType.PARENT_ASSIGN, {"parent_id": msg.peer_id, "re": msg.seq})

    def _on_leave(self, conn_id, msg, reply):
        room = self.registry.get(msg.room_id)
        if not room.is_active(msg.peer_id):
            raise UnknownPeerError(f"{msg.peer_id} is not an active peer of room {msg.room_id}")
        if msg.peer_id == room.source:
            reply(MsgType.LEAVE_ACK, {"room_closed": True})
            self._close(room, msg.seq)
            return
        reply(MsgType.LEAVE_ACK, {})
        self._depart("LEAVE", room, msg.peer_id, msg.seq)

    def _depart(self, op: str, room: RoomState, peer_id: str, re: Optional[int]) -> LeaveOutcome:
        rid = room.room_id
        tag = {} if re is None else {"re": re}

        def assign(pid, parent):
            self._push(rid, pid, MsgType.PARENT_ASSIGN, {"parent_id": parent, **tag})

        def announce(room, pending: PendingDeparture):
            for orphan, aux in pending.aux_assignments.items():
                self._push(rid, orphan, MsgType.AUX_ACTIVATE, {"aux_id": aux, **tag})
            for orphan, jo in pending.escalated:
                assign(orphan, jo.assigned_parent)
                if jo.displaced_child is not None:
                    assign(jo.displaced_child, orphan)

        pending, outcome = self.commit(op, rid, peer_id, {}, between=announce)
        self.monitor.untrack((rid, peer_id))
        early = {id(jo) for _, jo in pending.escalated}
        moves = []
        if outcome.promoted_child is not None:
            moves.append((outcome.promoted_child, outcome.former_parent))
        if outcome.refilled_source_child is not None:
            moves.append((outcome.refilled_source_child, outcome.former_parent))
        for pid, jo in outcome.rejoined_peers:
            if id(jo) in early:
                continue
            moves.append((pid, jo.assigned_parent))
            if jo.displaced_child is not None:
                moves.append((jo.displaced_child, pid))
        for pid, parent in moves:
            assign(pid, parent)
            if pid in pending.aux_assignments:
                self._push(rid, pid, MsgType.AUX_RELEASE, {"aux_id": pending.aux_assignments.pop(pid), **tag})
        return outcome

    def _close(self, room: RoomState, re: Optional[int]):
        rid = room.room_id
        members = room.active_ids()
        self.commit("CLOSE", rid, room.source, {})
        for pid in members:
            self.monitor.untrack((rid, pid))
            if pid != room.source:
                tag = {} if re is None else {"re": re}
                self._push(rid, pid, MsgType.ERROR, {"code": "room-closed", "text": f"room {rid} closed", **tag})

    def _on_stats(self, conn_id, msg, reply):
        room = self.registry.get(msg.room_id)
        if not room.is_active(msg.peer_id):
            raise UnknownPeerError(f"{msg.peer_id} is not an active peer of room {msg.room_id}")
        payload = {}
        for key in ("latency", "active_duration"):
            if key in msg.payload:
                val = msg.payload[key]
                if isinstance(val, bool) or not isinstance(val, (int, float)) or val < 0:
                    raise InvalidParameterError(f"payload.{key} must be a non-negative number")
                payload[key] = float(val)
        score = self.commit("STATS_UPDATE", msg.room_id, msg.peer_id, payload)
        reply(MsgType.STATS_UPDATE, {"score": score})

    def _on_pong(self, conn_id, msg, reply):
        self.monitor.on_pong((msg.room_id, msg.peer_id), self.clock())

    # ------------------------------------------------------------ liveness

    def fail_peer(self, room_id: str, peer_id: str) -> Outbox:
        """Run the failure path for a peer the heartbeat gave up on."""
        self._fail(room_id, peer_id)
        return self._drain()

    def _fail(self, room_id: str, peer_id: str) -> None:
        room = self.registry.get(room_id)
        if not room.is_active(peer_id):
            raise UnknownPeerError(f"{peer_id} is not an active peer of room {room_id}")
        self.failures.append((room_id, peer_id, self.clock()))
        log.info("peer %s in room %s declared failed", peer_id, room_id)
        if peer_id == room.source:
            self._close(room, None)
        else:
            self._depart("FAIL", room, peer_id, None)

    def heartbeat_tick(self, room_id: Optional[str] = None) -> Outbox:
        """One heartbeat round: count misses, fail the dead, PING everyone else."""
        now = self.clock()
        rooms = [room_id] if room_id is not None else list(self.registry.rooms)
        keys = [(rid, pid) for rid in rooms if rid in self.registry for pid in self.registry.rooms[rid].active_ids()]
        ping, dead = self.monitor.tick(now, keys)
        for rid, pid in dead:
            if rid in self.registry and self.registry.rooms[rid].is_active(pid):
                self._fail(rid, pid)
        for rid, pid in ping:
            if rid in self.registry and self.registry.rooms[rid].is_active(pid):
                self._push(rid, pid, MsgType.PING, {"t": now})
        return self._drain()
