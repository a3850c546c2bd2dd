"""Random join/leave/fail/stats workloads driven through the signaling service.

Each run records every structural problem seen after each operation and in
the middle of each departure (while orphans ride on auxiliary feeds), and
keeps the service's event log so the final rooms can be replayed.
"""

from __future__ import annotations

import dataclasses
import random
from dataclasses import dataclass, field
from typing import Optional

from .model import PeerState, RoomState, ScoreParams, validate_room
from .scoring import initial_score, peer_slots
from .signaling.eventlog import replay_event_log
from .signaling.service import SignalingService

ROOM = "fuzz"


@dataclass
class FuzzReport:
    seed: int
    ops: int
    violations: list[tuple[int, str, str]] = field(default_factory=list)
    stranded: list[tuple[int, str]] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)
    records: list[dict] = field(default_factory=list)
    room: Optional[RoomState] = None

    @property
    def ok(self) -> bool:
        return not self.violations and not self.stranded


def stranded_peers(room: RoomState) -> list[str]:
    """ACTIVE non-source peers with neither a parent nor an active auxiliary feed."""
    return [
        p
        for p in room.active_ids()
        if p != room.source and room.peers[p].parent is None and p not in room.active_aux
    ]


def _bandwidth(rng: random.Random) -> float:
    u = rng.random()
    lo, hi = (5.0, 15.0) if u < 0.6 else (15.0, 50.0) if u < 0.85 else (50.0, 100.0)
    return round(rng.uniform(lo, hi), 3)


def fuzz_run(
    seed: int,
    n_ops: int = 1000,
    params: Optional[ScoreParams] = None,
    streaming_rate: float = 2.5,
) -> FuzzReport:
    params = params or ScoreParams()
    rng = random.Random(f"fuzz:{seed}")
    svc = SignalingService(params=params, streaming_rate=streaming_rate)
    rep = FuzzReport(seed=seed, ops=n_ops)
    counts = {"JOIN": 0, "LEAVE": 0, "FAIL": 0, "STATS_UPDATE": 0}

    def scored(bw: float) -> dict:
        return {
            "upload_bandwidth": bw,
            "score": initial_score(bw, streaming_rate, params),
            "slots": peer_slots(bw, streaming_rate, params),
        }

    src_bw = _bandwidth(rng)
    svc.commit("ROOM_CREATE", ROOM, "S", {**scored(src_bw), "streaming_rate": streaming_rate,
                                          "params": dataclasses.asdict(params)})
    room = svc.registry.get(ROOM)
    next_id = 0

    def mid(step, op):
        def check(r, pending):
            for msg in validate_room(r):
                rep.violations.append((step, f"{op}/mid", msg))
            for p in stranded_peers(r):
                rep.stranded.append((step, p))
        return check

    for step in range(n_ops):
        live = [p for p in room.active_ids() if p != room.source]
        gone = sorted(p for p, r in room.peers.items() if r.state is not PeerState.ACTIVE)
        roll = rng.random()
        if not live or roll < 0.45:
            if gone and rng.random() < 0.3:
                pid = rng.choice(gone)
            else:
                pid = f"p{next_id}"
                next_id += 1
            op, payload = "JOIN", scored(_bandwidth(rng))
            svc.commit(op, ROOM, pid, payload)
        elif roll < 0.85:
            op = "LEAVE" if roll < 0.65 else "FAIL"
            pid = rng.choice(sorted(live))
            svc.commit(op, ROOM, pid, {}, between=mid(step, op))
        else:
            op = "STATS_UPDATE"
            pid = rng.choice(sorted(live))
            payload = {"latency": round(rng.uniform(0.005, 0.5), 4), "active_duration": round(rng.uniform(0, 600), 1)}
            svc.commit(op, ROOM, pid, payload)
        counts[op] += 1
        for msg in validate_room(room):
            rep.violations.append((step, op, msg))
        for p in stranded_peers(room):
            rep.stranded.append((step, p))
        if room.active_aux:
            rep.violations.append((step, op, f"auxiliary feeds left active: {room.active_aux}"))

    rep.counts = counts
    rep.records = list(svc.log.records)
    rep.room = room
    return rep


def replay_matches(rep: FuzzReport) -> bool:
    rooms = replay_event_log(rep.records)
    return rooms.get(ROOM) == rep.room
