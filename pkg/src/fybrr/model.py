"""Domain types for a streaming room and the structural checks over them."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .errors import InvalidParameterError

PeerId = str


class PeerState(str, enum.Enum):
    JOINING = "JOINING"
    ACTIVE = "ACTIVE"
    LEAVING = "LEAVING"
    FAILED = "FAILED"


SLOT_MODES = ("bucketed", "ratio")


@dataclass(frozen=True)
class ScoreParams:
    """Weights and guards for the peer score and the slot budget.

    ``latency_floor`` and ``failure_floor`` replace zero denominators.
    ``slot_mode`` picks the bandwidth-bucket table or the raw
    bandwidth/rate ratio (at least 1, at most ``max_slots``).
    """

    k1: float = 0.5
    k2: float = 0.25
    k3: float = 0.25
    latency_floor: float = 0.001
    failure_floor: int = 1
    min_slots: int = 2
    max_slots: int = 4
    slot_mode: str = "bucketed"

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise InvalidParameterError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if min(self.k1, self.k2, self.k3) < 0:
            out.append("weights must be non-negative")
        if abs(self.k1 + self.k2 + self.k3 - 1.0) > 1e-9:
            out.append(f"weights sum to {self.k1 + self.k2 + self.k3!r}, expected 1")
        if not self.latency_floor > 0:
            out.append("latency_floor must be positive")
        if self.failure_floor < 1:
            out.append("failure_floor must be >= 1")
        if not 1 <= self.min_slots <= self.max_slots:
            out.append("need 1 <= min_slots <= max_slots")
        if self.slot_mode not in SLOT_MODES:
            out.append(f"slot_mode must be one of {SLOT_MODES}")
        return out


def check_peer_id(peer_id: str) -> str:
    if not isinstance(peer_id, str) or not 1 <= len(peer_id) <= 64 or not peer_id.isprintable():
        raise InvalidParameterError(f"bad peer id {peer_id!r}: need 1-64 printable characters")
    return peer_id


@dataclass
class PeerRecord:
    id: PeerId
    upload_bandwidth: float
    latency: float = 0.0
    active_duration: float = 0.0
    num_of_failure: int = 0
    score: float = 0.0
    slots: int = 0
    parent: Optional[PeerId] = None
    children: list[PeerId] = field(default_factory=list)
    state: PeerState = PeerState.JOINING
    # Order of the first join into the room; used for deterministic tie-breaks.
    join_seq: int = -1

    def __post_init__(self):
        check_peer_id(self.id)
        if not self.upload_bandwidth > 0:
            raise InvalidParameterError(f"{self.id}: upload_bandwidth must be positive")

    @property
    def free_slots(self) -> int:
        return self.slots - len(self.children)


@dataclass
class RoomState:
    room_id: str
    source: PeerId
    peers: dict[PeerId, PeerRecord]
    streaming_rate: float
    params: ScoreParams = field(default_factory=ScoreParams)
    aux_table: dict[PeerId, list[PeerId]] = field(default_factory=dict)
    active_aux: dict[PeerId, PeerId] = field(default_factory=dict)
    next_join_seq: int = 0

    def is_active(self, peer_id: PeerId) -> bool:
        rec = self.peers.get(peer_id)
        return rec is not None and rec.state is PeerState.ACTIVE

    def active_ids(self) -> list[PeerId]:
        return [p for p, r in self.peers.items() if r.state is PeerState.ACTIVE]

    def aux_load(self, peer_id: PeerId) -> int:
        return sum(1 for a in self.active_aux.values() if a == peer_id)


def tree_depths(room: RoomState) -> dict[PeerId, int]:
    """Breadth-first depths of every peer reachable from the source via child links."""
    depths = {room.source: 0}
    queue = deque([room.source])
    while queue:
        pid = queue.popleft()
        for c in room.peers[pid].children:
            if c not in depths:
                depths[c] = depths[pid] + 1
                queue.append(c)
    return depths


def validate_room(room: RoomState) -> list[str]:
    """Return a description of every violated structural invariant (empty if valid).

    An ACTIVE peer without a parent is tolerated only while it holds an
    active auxiliary feed (it is mid-recovery).
    """
    v: list[str] = []
    peers = room.peers
    if room.source not in peers:
        return [f"source {room.source} missing from peers"]
    if not room.streaming_rate > 0:
        v.append("streaming_rate must be positive")
    v.extend(f"params: {p}" for p in room.params.problems())

    src = peers[room.source]
    if src.state is not PeerState.ACTIVE:
        v.append(f"source {room.source} is {src.state.value}, expected ACTIVE")
    if src.parent is not None:
        v.append(f"source {room.source} has parent {src.parent}")

    seen_as_child: dict[PeerId, PeerId] = {}
    for pid, rec in peers.items():
        if rec.id != pid:
            v.append(f"peers[{pid}] holds record for {rec.id}")
        if len(rec.children) > rec.slots:
            v.append(f"{pid} has {len(rec.children)} children but {rec.slots} slots")
        if len(set(rec.children)) != len(rec.children):
            v.append(f"{pid} lists a child twice")
        if rec.state is not PeerState.ACTIVE:
            if rec.parent is not None or rec.children:
                v.append(f"{pid} is {rec.state.value} but still has tree links")
            continue
        if pid != room.source and rec.parent is None and pid not in room.active_aux:
            v.append(f"{pid} is ACTIVE with no parent and no auxiliary feed")
        if rec.parent is not None:
            par = peers.get(rec.parent)
            if par is None:
                v.append(f"{pid}.parent = {rec.parent} which is unknown")
            elif par.state is not PeerState.ACTIVE:
                v.append(f"{pid}.parent = {rec.parent} which is {par.state.value}")
            elif pid not in par.children:
                v.append(f"{pid}.parent = {rec.parent} but {rec.parent} does not list {pid}")
        for c in rec.children:
            crec = peers.get(c)
            if crec is None:
                v.append(f"{pid} lists unknown child {c}")
                continue
            if crec.state is not PeerState.ACTIVE:
                v.append(f"{pid} lists child {c} which is {crec.state.value}")
            if crec.parent != pid:
                v.append(f"{pid} lists child {c} but {c}.parent = {crec.parent}")
            if c in seen_as_child and seen_as_child[c] != pid:
                v.append(f"{c} appears in children of both {seen_as_child[c]} and {pid}")
            seen_as_child[c] = pid
        if pid in seen_as_child and pid == room.source:
            v.append(f"source {pid} is listed as a child")

    for orphan, aux in room.active_aux.items():
        if not room.is_active(orphan):
            v.append(f"active_aux entry for non-ACTIVE peer {orphan}")
        if not room.is_active(aux):
            v.append(f"active_aux[{orphan}] = {aux} which is not ACTIVE")
        elif len(peers[aux].children) + room.aux_load(aux) > peers[aux].slots:
            v.append(f"auxiliary parent {aux} is over capacity")
    for pid in room.aux_table:
        if pid not in peers:
            v.append(f"aux_table entry for unknown peer {pid}")

    # Connectivity: every ACTIVE peer hangs off the source, either directly via
    # tree links or through the subtree of an orphan that an auxiliary feeds.
    reach = _reachable(room)
    for pid in room.active_ids():
        if pid not in reach:
            v.append(f"{pid} is ACTIVE but not connected to source {room.source}")
    return v


def _reachable(room: RoomState) -> set[PeerId]:
    feeds: dict[PeerId, list[PeerId]] = {}
    for orphan, aux in room.active_aux.items():
        feeds.setdefault(aux, []).append(orphan)
    seen = {room.source}
    queue = deque([room.source])
    while queue:
        pid = queue.popleft()
        rec = room.peers.get(pid)
        if rec is None:
            continue
        nxt = list(rec.children) + feeds.get(pid, [])
        for c in nxt:
            if c not in seen and c in room.peers:
                seen.add(c)
                queue.append(c)
    return seen
