"""How much of the peers' forwarding capacity a topology uses or asks for."""

from __future__ import annotations

from typing import Sequence

from ..model import PeerRecord, RoomState

FIXED_FANOUT = {"BINARY": 2, "QUAD": 4}


def capacity_utilization(room: RoomState) -> float:
    """Occupied child edges over the slot total of ACTIVE peers."""
    active = [room.peers[p] for p in room.active_ids()]
    total = sum(r.slots for r in active)
    if total == 0:
        return 0.0
    return sum(len(r.children) for r in active) / total


def capacity_demand(scheme: str, peers: Sequence[PeerRecord]) -> float:
    """Forwarding slots a scheme hands each peer, over the slots the peers can afford.

    ``peers`` carry their bandwidth-derived slots.  Fixed-fanout schemes give
    every peer k slots regardless; the adaptive scheme hands out exactly what
    each peer has, so its demand is 1.
    """
    if not peers:
        raise ValueError("need at least one peer")
    actual = sum(p.slots for p in peers)
    k = FIXED_FANOUT.get(scheme.upper())
    allocated = actual if k is None else k * len(peers)
    return allocated / actual
