"""Overlay tree maintenance: joins, departures, failures and auxiliary feeds.

Every public mutator leaves the room passing :func:`~fybrr.model.validate_room`.
Departures run in two phases so callers can observe the recovery window:
:func:`begin_departure` detaches the peer and bridges its orphans through
auxiliary feeds, :func:`complete_departure` rebuilds the tree and releases
them.  :func:`leave_peer` and :func:`handle_failure` run both back to back.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .errors import (
    DuplicatePeerError,
    DuplicateRoomError,
    EmptyChildrenError,
    FybrrError,
    InvalidParameterError,
    NoCapacityError,
    NoLiveCandidateError,
    RoomNotFoundError,
    SourceCannotLeaveError,
    SourceHasNoAuxError,
    UnknownPeerError,
)
from .model import PeerId, PeerRecord, PeerState, RoomState, ScoreParams, tree_depths
from .scoring import PeerStats, compute_score, initial_score, peer_slots


@dataclass
class JoinOutcome:
    assigned_parent: PeerId
    displaced_child: Optional[PeerId] = None
    aux_candidates: list[PeerId] = field(default_factory=list)


@dataclass
class LeaveOutcome:
    promoted_child: Optional[PeerId] = None
    refilled_source_child: Optional[PeerId] = None
    rejoined_peers: list[tuple[PeerId, JoinOutcome]] = field(default_factory=list)
    # orphan -> temporary parent, in activation order
    aux_assignments: dict[PeerId, PeerId] = field(default_factory=dict)
    former_parent: Optional[PeerId] = None

    def reparented(self) -> list[tuple[PeerId, PeerId]]:
        """(peer, new parent) for every peer whose parent changed, in order."""
        out = []
        if self.promoted_child is not None:
            out.append((self.promoted_child, self.former_parent))
        if self.refilled_source_child is not None:
            out.append((self.refilled_source_child, self.former_parent))
        for pid, jo in self.rejoined_peers:
            out.append((pid, jo.assigned_parent))
            if jo.displaced_child is not None:
                out.append((jo.displaced_child, pid))
        return out


@dataclass
class PendingDeparture:
    peer_id: PeerId
    failed: bool
    former_parent: PeerId
    former_index: int
    # Best child first, then the rest in descending score order.
    orphans: list[PeerId]
    aux_assignments: dict[PeerId, PeerId] = field(default_factory=dict)
    escalated: list[tuple[PeerId, JoinOutcome]] = field(default_factory=list)


# ---------------------------------------------------------------- rooms


def make_peer(
    peer_id: PeerId,
    upload_bandwidth: float,
    streaming_rate: float,
    params: ScoreParams,
    latency: float = 0.0,
    active_duration: float = 0.0,
    num_of_failure: int = 0,
) -> PeerRecord:
    """Build a record with its join-time score and slot budget filled in."""
    rec = PeerRecord(
        id=peer_id,
        upload_bandwidth=upload_bandwidth,
        latency=latency,
        active_duration=active_duration,
        num_of_failure=num_of_failure,
    )
    rec.score = initial_score(upload_bandwidth, streaming_rate, params)
    rec.slots = peer_slots(upload_bandwidth, streaming_rate, params)
    return rec


def create_room(
    room_id: str,
    source_peer: PeerRecord,
    streaming_rate: float,
    params: Optional[ScoreParams] = None,
) -> RoomState:
    params = params or ScoreParams()
    if not streaming_rate > 0:
        raise InvalidParameterError("streaming_rate must be positive")
    src = copy.deepcopy(source_peer)
    if src.slots <= 0:
        src.slots = peer_slots(src.upload_bandwidth, streaming_rate, params)
    if src.score == 0:
        src.score = initial_score(src.upload_bandwidth, streaming_rate, params)
    src.parent = None
    src.children = []
    src.state = PeerState.ACTIVE
    src.join_seq = 0
    return RoomState(
        room_id=room_id,
        source=src.id,
        peers={src.id: src},
        streaming_rate=streaming_rate,
        params=params,
        next_join_seq=1,
    )


class RoomRegistry:
    """Rooms hosted by one server, keyed by room id."""

    def __init__(self):
        self.rooms: dict[str, RoomState] = {}

    def create_room(self, room_id, source_peer, streaming_rate, params=None) -> RoomState:
        if room_id in self.rooms:
            raise DuplicateRoomError(f"room {room_id} already exists")
        room = create_room(room_id, source_peer, streaming_rate, params)
        self.rooms[room_id] = room
        return room

    def get(self, room_id: str) -> RoomState:
        try:
            return self.rooms[room_id]
        except KeyError:
            raise RoomNotFoundError(f"room {room_id} not found") from None

    def close_room(self, room_id: str) -> RoomState:
        return self.rooms.pop(self.get(room_id).room_id)

    def __contains__(self, room_id):
        return room_id in self.rooms


# ---------------------------------------------------------------- queries


def _require_active(room: RoomState, peer_id: PeerId) -> PeerRecord:
    rec = room.peers.get(peer_id)
    if rec is None or rec.state is not PeerState.ACTIVE:
        raise UnknownPeerError(f"{peer_id} is not an active peer of room {room.room_id}")
    return rec


def depth(room: RoomState, peer_id: PeerId) -> int:
    _require_active(room, peer_id)
    d = 0
    cur = room.peers[peer_id]
    while cur.parent is not None:
        d += 1
        cur = room.peers[cur.parent]
    if cur.id != room.source:
        raise UnknownPeerError(f"{peer_id} is not attached to the tree")
    return d


def height(room: RoomState) -> int:
    return max(tree_depths(room).values())


def _rank(room: RoomState, depths: dict[PeerId, int]):
    """Sort key: higher score first, then shallower, then earlier join."""
    return lambda p: (-room.peers[p].score, depths.get(p, 1 << 30), room.peers[p].join_seq)


def find_min_slot_child_of_source(room: RoomState) -> PeerId:
    children = room.peers[room.source].children
    if not children:
        raise EmptyChildrenError(f"source {room.source} has no children")
    return min(children, key=lambda c: (room.peers[c].slots, room.peers[c].join_seq))


def spare(room: RoomState, peer_id: PeerId, reserved: Optional[PeerId] = None) -> int:
    """Slots not taken by children, auxiliary feeds or a reservation."""
    rec = room.peers[peer_id]
    return rec.free_slots - room.aux_load(peer_id) - (peer_id == reserved)


def find_best_parent(
    room: RoomState, depths: Optional[dict[PeerId, int]] = None, reserved: Optional[PeerId] = None
) -> PeerId:
    """Highest-score peer with a free slot on the shallowest level that has one.

    A level is filled before the next one is opened; picking by score alone
    lets a run of ever-stronger joiners stack into a chain.
    """
    depths = depths if depths is not None else tree_depths(room)
    free = [
        p
        for p in depths
        if room.peers[p].state is PeerState.ACTIVE and spare(room, p, reserved) > 0
    ]
    if not free:
        raise NoCapacityError(f"no peer in room {room.room_id} has a free slot")
    return min(free, key=lambda p: (depths[p], -room.peers[p].score, room.peers[p].join_seq))


def find_next_best_node(room: RoomState, depths: Optional[dict[PeerId, int]] = None) -> Optional[PeerId]:
    """Highest-score attached peer that is neither the source nor one of its children."""
    depths = depths if depths is not None else tree_depths(room)
    src_children = set(room.peers[room.source].children)
    pool = [p for p in depths if p != room.source and p not in src_children]
    if not pool:
        return None
    return min(pool, key=_rank(room, depths))


def auxiliary_candidates(
    room: RoomState, peer_id: PeerId, depths: Optional[dict[PeerId, int]] = None
) -> list[PeerId]:
    """Temporary-parent candidates for ``peer_id``, best first.

    The parent's siblings and the grandparent, ordered by hop distance from
    the source and then by score.  Children of the source fall back to their
    own siblings; an empty result falls back to the source.
    """
    rec = _require_active(room, peer_id)
    if peer_id == room.source:
        raise SourceHasNoAuxError("the source has no auxiliary candidates")
    depths = depths if depths is not None else tree_depths(room)
    parent = rec.parent
    pool: list[PeerId] = []
    if parent is not None:
        if parent == room.source:
            pool = list(room.peers[room.source].children)
        else:
            grand = room.peers[parent].parent
            if grand is not None:
                pool = list(room.peers[grand].children) + [grand]
    pool = [
        p
        for p in pool
        if p not in (peer_id, parent) and room.is_active(p) and p in depths
    ]
    if not pool:
        return [room.source]
    return sorted(dict.fromkeys(pool), key=lambda p: (depths[p], -room.peers[p].score, room.peers[p].join_seq))


def _subtree(room: RoomState, root: PeerId) -> set[PeerId]:
    out = {root}
    stack = [root]
    while stack:
        for c in room.peers[stack.pop()].children:
            if c not in out:
                out.add(c)
                stack.append(c)
    return out


def _can_feed(room: RoomState, cand: PeerId, orphan: PeerId, depths: dict[PeerId, int]) -> bool:
    rec = room.peers.get(cand)
    return (
        rec is not None
        and cand != orphan
        and rec.state is PeerState.ACTIVE
        and cand in depths
        and rec.slots - len(rec.children) - room.aux_load(cand) > 0
    )


def activate_auxiliary(
    room: RoomState,
    orphan: PeerId,
    candidates: Optional[Iterable[PeerId]] = None,
    depths: Optional[dict[PeerId, int]] = None,
) -> PeerId:
    """Point ``orphan`` at the first live candidate with spare forwarding capacity.

    ``candidates`` defaults to the orphan's precomputed list in ``aux_table``.
    Only peers still attached to the source qualify, which keeps feeds out of
    other orphaned subtrees.
    """
    rec = _require_active(room, orphan)
    if rec.parent is not None and room.is_active(rec.parent):
        raise FybrrError(f"{orphan} still has a live parent {rec.parent}")
    depths = depths if depths is not None else tree_depths(room)
    cands = room.aux_table.get(orphan, []) if candidates is None else candidates
    for cand in cands:
        if _can_feed(room, cand, orphan, depths):
            room.active_aux[orphan] = cand
            return cand
    raise NoLiveCandidateError(f"no live auxiliary candidate for {orphan}")


def release_auxiliary(room: RoomState, orphan: PeerId) -> Optional[PeerId]:
    return room.active_aux.pop(orphan, None)


# ---------------------------------------------------------------- joining


def _place(room: RoomState, peer_id: PeerId, reserved: Optional[PeerId] = None) -> JoinOutcome:
    """Attach an ACTIVE, parentless peer (with whatever subtree it has).

    ``reserved`` names a peer holding one slot back for a pending promotion.
    """
    rec = room.peers[peer_id]
    src = room.peers[room.source]
    displaced = None
    if spare(room, room.source, reserved) > 0:
        parent = room.source
        src.children.append(peer_id)
    else:
        depths = None
        minchild = find_min_slot_child_of_source(room) if src.children else None
        if (
            minchild is not None
            and room.peers[minchild].slots < rec.slots
            and rec.free_slots > 0
        ):
            parent = room.source
            displaced = minchild
            idx = src.children.index(minchild)
            src.children[idx] = peer_id
            room.peers[minchild].parent = peer_id
            rec.children.append(minchild)
        else:
            depths = tree_depths(room)
            parent = find_best_parent(room, depths, reserved)
            room.peers[parent].children.append(peer_id)
    rec.parent = parent
    release_auxiliary(room, peer_id)
    aux = auxiliary_candidates(room, peer_id)
    room.aux_table[peer_id] = aux
    return JoinOutcome(assigned_parent=parent, displaced_child=displaced, aux_candidates=list(aux))


def join_peer(room: RoomState, peer: PeerRecord) -> JoinOutcome:
    """Admit ``peer`` (score and slots already filled in) into the overlay."""
    existing = room.peers.get(peer.id)
    if existing is not None and existing.state is PeerState.ACTIVE:
        raise DuplicatePeerError(f"{peer.id} is already active in room {room.room_id}")
    if room.active_aux:
        raise FybrrError("a departure is still being recovered")
    src = room.peers[room.source]
    if src.free_slots <= 0 and find_best_parent_or_none(room) is None:
        minchild = find_min_slot_child_of_source(room) if src.children else None
        if minchild is None or not room.peers[minchild].slots < peer.slots:
            raise NoCapacityError(f"room {room.room_id} has no free slot for {peer.id}")
    rec = copy.deepcopy(peer)
    if existing is not None:
        rec.num_of_failure = max(rec.num_of_failure, existing.num_of_failure)
    rec.parent = None
    rec.children = []
    rec.state = PeerState.ACTIVE
    rec.join_seq = room.next_join_seq
    room.next_join_seq += 1
    room.peers[rec.id] = rec
    return _place(room, rec.id)


def find_best_parent_or_none(room: RoomState) -> Optional[PeerId]:
    try:
        return find_best_parent(room)
    except NoCapacityError:
        return None


# ---------------------------------------------------------------- leaving


def _add_subtree_depths(room: RoomState, root: PeerId, d: int, depths: dict[PeerId, int]) -> None:
    stack = [(root, d)]
    while stack:
        pid, pd = stack.pop()
        depths[pid] = pd
        stack.extend((c, pd + 1) for c in room.peers[pid].children)


def _fed_depths(room: RoomState) -> dict[PeerId, int]:
    """Hop counts of every peer that receives the stream, auxiliary feeds included."""
    depths = tree_depths(room)
    pending = dict(room.active_aux)
    while pending:
        ready = [o for o, a in pending.items() if a in depths]
        if not ready:
            break
        for o in sorted(ready):
            _add_subtree_depths(room, o, depths[pending.pop(o)] + 1, depths)
    return depths


def begin_departure(room: RoomState, peer_id: PeerId, failed: bool = False) -> PendingDeparture:
    """Detach ``peer_id`` and bridge each orphan through an auxiliary feed.

    An orphan for which no attached peer has spare capacity is re-joined at
    once instead.
    """
    rec = _require_active(room, peer_id)
    if peer_id == room.source:
        raise SourceCannotLeaveError("the source cannot leave; close the room instead")
    if room.active_aux:
        raise FybrrError("a departure is still being recovered")
    parent = rec.parent
    if parent is None:
        raise FybrrError(f"{peer_id} has no parent")

    fresh = {c: [p for p in auxiliary_candidates(room, c) if p != peer_id] for c in rec.children}

    siblings = room.peers[parent].children
    idx = siblings.index(peer_id)
    del siblings[idx]
    rec.parent = None
    orphans = list(rec.children)
    rec.children = []
    rec.state = PeerState.FAILED if failed else PeerState.LEAVING
    if failed:
        rec.num_of_failure += 1
    room.aux_table.pop(peer_id, None)
    for o in orphans:
        room.peers[o].parent = None

    ranked = sorted(orphans, key=lambda p: (-room.peers[p].score, room.peers[p].join_seq))
    pending = PendingDeparture(
        peer_id=peer_id, failed=failed, former_parent=parent, former_index=idx, orphans=ranked
    )
    depths = tree_depths(room)
    reserved = None
    for o in ranked:
        mesh = sorted(
            (p for p in depths if _can_feed(room, p, o, depths)),
            key=lambda p: (depths[p], -room.peers[p].score, room.peers[p].join_seq),
        )
        aux = None
        for cands in (room.aux_table.get(o, []), fresh[o], mesh):
            try:
                aux = activate_auxiliary(room, o, cands, depths)
                break
            except NoLiveCandidateError:
                continue
        if aux is None:
            jo = _place(room, o, reserved)
            pending.escalated.append((o, jo))
            depths = _fed_depths(room)
        else:
            pending.aux_assignments[o] = aux
            # The orphan's subtree now receives the stream and may feed later orphans.
            _add_subtree_depths(room, o, depths[aux] + 1, depths)
        if o == ranked[0] and aux is not None and aux != parent:
            # The vacated slot is kept for the promotion in complete_departure.
            reserved = parent
    return pending


def complete_departure(room: RoomState, pending: PendingDeparture) -> LeaveOutcome:
    """Rebuild the tree around a departed peer and release auxiliary feeds."""
    out = LeaveOutcome(
        rejoined_peers=list(pending.escalated),
        aux_assignments=dict(pending.aux_assignments),
        former_parent=pending.former_parent,
    )
    escalated = {p for p, _ in pending.escalated}
    waiting = [o for o in pending.orphans if o not in escalated]
    parent = room.peers[pending.former_parent]

    if pending.orphans:
        best = pending.orphans[0]
        if best in escalated:
            rest = waiting
        else:
            release_auxiliary(room, best)
            room.peers[best].parent = parent.id
            parent.children.insert(min(pending.former_index, len(parent.children)), best)
            room.aux_table[best] = auxiliary_candidates(room, best)
            out.promoted_child = best
            rest = waiting[1:]
        for o in rest:
            release_auxiliary(room, o)
            out.rejoined_peers.append((o, _place(room, o)))
    elif pending.former_parent == room.source:
        nxt = find_next_best_node(room)
        if nxt is not None:
            nrec = room.peers[nxt]
            room.peers[nrec.parent].children.remove(nxt)
            nrec.parent = room.source
            parent.children.insert(min(pending.former_index, len(parent.children)), nxt)
            room.aux_table[nxt] = auxiliary_candidates(room, nxt)
            out.refilled_source_child = nxt
    return out


def leave_peer(room: RoomState, peer_id: PeerId) -> LeaveOutcome:
    return complete_departure(room, begin_departure(room, peer_id, failed=False))


def handle_failure(room: RoomState, peer_id: PeerId) -> LeaveOutcome:
    """Same restructuring as a leave; the tombstone's failure count goes up by one."""
    return complete_departure(room, begin_departure(room, peer_id, failed=True))


def update_stats(
    room: RoomState,
    peer_id: PeerId,
    latency: Optional[float] = None,
    active_duration: Optional[float] = None,
) -> float:
    """Refresh the measured stats of a peer and recompute its score.

    The tree is left alone; the new score only steers later placements.
    """
    rec = _require_active(room, peer_id)
    if latency is not None:
        if latency < 0:
            raise InvalidParameterError("latency must be >= 0")
        rec.latency = float(latency)
    if active_duration is not None:
        if active_duration < 0:
            raise InvalidParameterError("active_duration must be >= 0")
        rec.active_duration = float(active_duration)
    stats = PeerStats(rec.upload_bandwidth, rec.latency, rec.active_duration, rec.num_of_failure)
    rec.score = compute_score(stats, room.streaming_rate, room.params)
    return rec.score
