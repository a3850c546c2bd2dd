"""Fixed-fanout comparison overlays: binary (2 children) and quad (4 children).

Fan-out ignores bandwidth.  The tree is filled breadth first in join order;
under churn a newcomer or an orphaned subtree takes the first free slot in
breadth-first order.
"""

from __future__ import annotations

import copy
from collections import deque
from typing import Optional, Sequence

from ..model import PeerId, PeerRecord, PeerState, RoomState, ScoreParams, tree_depths
from ..overlay import create_room

FANOUT = {"BINARY": 2, "QUAD": 4}


def _first_free(room: RoomState) -> PeerId:
    queue = deque([room.source])
    while queue:
        pid = queue.popleft()
        rec = room.peers[pid]
        if len(rec.children) < rec.slots:
            return pid
        queue.extend(rec.children)
    raise AssertionError("a tree of fixed-fanout nodes always has a free slot")


def _attach(room: RoomState, pid: PeerId) -> PeerId:
    parent = _first_free(room)
    room.peers[parent].children.append(pid)
    room.peers[pid].parent = parent
    return parent


def baseline_join(room: RoomState, peer: PeerRecord) -> PeerId:
    k = room.peers[room.source].slots
    rec = copy.deepcopy(peer)
    rec.slots = k
    rec.parent = None
    rec.children = []
    rec.state = PeerState.ACTIVE
    rec.join_seq = room.next_join_seq
    room.next_join_seq += 1
    room.peers[rec.id] = rec
    return _attach(room, rec.id)


def build_baseline(scheme: str, peers: Sequence[PeerRecord], streaming_rate: float = 2.5,
                   params: Optional[ScoreParams] = None) -> RoomState:
    """Complete k-ary tree over ``peers`` (source first) in list order."""
    k = FANOUT[scheme.upper()]
    src = copy.deepcopy(peers[0])
    src.slots = k
    room = create_room(f"{scheme.lower()}", src, streaming_rate, params)
    for p in peers[1:]:
        baseline_join(room, p)
    return room


def baseline_detach(room: RoomState, pid: PeerId, failed: bool = False) -> list[PeerId]:
    """Remove ``pid`` from the tree; returns its orphaned children (still parentless)."""
    rec = room.peers[pid]
    if rec.parent is not None:
        room.peers[rec.parent].children.remove(pid)
    rec.parent = None
    orphans = list(rec.children)
    rec.children = []
    rec.state = PeerState.FAILED if failed else PeerState.LEAVING
    if failed:
        rec.num_of_failure += 1
    for o in orphans:
        room.peers[o].parent = None
    return orphans


def baseline_reattach(room: RoomState, orphans: Sequence[PeerId]) -> list[tuple[PeerId, PeerId]]:
    return [(o, _attach(room, o)) for o in orphans if room.is_active(o)]


def baseline_height(room: RoomState) -> int:
    return max(tree_depths(room).values())
