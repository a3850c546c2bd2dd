"""Hand-built rooms for the join/leave scenarios."""

from __future__ import annotations

from collections import deque
from typing import Optional

from fybrr.model import PeerRecord, PeerState, RoomState, ScoreParams


def build_room(
    tree: dict[str, list[str]],
    slots: dict[str, int],
    scores: Optional[dict[str, float]] = None,
    source: str = "S",
    streaming_rate: float = 5.0,
    params: Optional[ScoreParams] = None,
) -> RoomState:
    """Room whose tree is ``tree`` (parent -> ordered children).

    Join order follows breadth-first order from the source, which is also the
    order a sequence of joins would have produced for most fixtures.
    """
    scores = scores or {}
    order = []
    queue = deque([source])
    while queue:
        pid = queue.popleft()
        order.append(pid)
        queue.extend(tree.get(pid, []))
    peers = {}
    for i, pid in enumerate(order):
        peers[pid] = PeerRecord(
            id=pid,
            upload_bandwidth=10.0,
            score=scores.get(pid, 1.0),
            slots=slots.get(pid, 2),
            children=list(tree.get(pid, [])),
            state=PeerState.ACTIVE,
            join_seq=i,
        )
    for parent, kids in tree.items():
        for c in kids:
            peers[c].parent = parent
    return RoomState(
        room_id="fixture",
        source=source,
        peers=peers,
        streaming_rate=streaming_rate,
        params=params or ScoreParams(),
        next_join_seq=len(order),
    )


def newcomer(pid: str, slots: int, score: float = 1.0) -> PeerRecord:
    return PeerRecord(id=pid, upload_bandwidth=10.0, score=score, slots=slots)


# ---------------------------------------------------------------- scenarios
# Each returns a list of mismatches against the expected outcome (empty = match).

def _expect(got, want, what) -> list[str]:
    return [] if got == want else [f"{what}: got {got!r}, want {want!r}"]


def scenario_join_free_source() -> list[str]:
    from fybrr.overlay import join_peer

    room = build_room({"S": []}, {"S": 2})
    out = join_peer(room, newcomer("A", 2))
    return _expect(out.assigned_parent, "S", "parent of A") + _expect(out.displaced_child, None, "displaced")


def scenario_join_displaces_weak_source_child() -> list[str]:
    from fybrr.overlay import join_peer

    room = build_room({"S": ["A", "B"], "A": ["A1"]}, {"S": 2, "A": 3, "B": 4})
    out = join_peer(room, newcomer("C", 6))
    bad = _expect(out.assigned_parent, "S", "parent of C")
    bad += _expect(out.displaced_child, "A", "displaced")
    bad += _expect(room.peers["A"].parent, "C", "parent of A")
    bad += _expect(room.peers["A"].children, ["A1"], "A's subtree")
    bad += _expect(room.peers["S"].children, ["C", "B"], "source children")
    return bad


def scenario_join_best_parent() -> list[str]:
    from fybrr.overlay import join_peer

    room = build_room(
        {"S": ["P1", "P2", "P3"], "P3": ["Q1", "Q2", "Q3"]},
        {"S": 3, "P1": 3, "P2": 3, "P3": 3},
        {"P1": 5, "P2": 7, "P3": 9},
    )
    out = join_peer(room, newcomer("X", 2))
    return _expect(out.assigned_parent, "P2", "parent of X") + _expect(out.displaced_child, None, "displaced")


def scenario_leave_promotes_best_child() -> list[str]:
    from fybrr.overlay import leave_peer

    room = build_room(
        {"S": ["D", "H"], "D": ["E", "F"], "F": ["F1"]},
        {"S": 2, "D": 2, "E": 2, "F": 3, "H": 3},
        {"D": 4, "E": 3, "F": 8, "H": 6},
    )
    out = leave_peer(room, "D")
    bad = _expect(out.promoted_child, "F", "promoted")
    bad += _expect(room.peers["S"].children, ["F", "H"], "source children")
    bad += _expect(room.peers["F"].children[:1], ["F1"], "F keeps its subtree")
    bad += _expect([p for p, _ in out.rejoined_peers], ["E"], "re-joined")
    bad += _expect(room.peers["E"].parent, "F", "parent of E")
    bad += _expect(room.peers["D"].state.value, "LEAVING", "leaver state")
    return bad


def scenario_leave_free_rider_refills_source() -> list[str]:
    from fybrr.overlay import leave_peer

    room = build_room(
        {"S": ["L", "A"], "A": ["G", "K"], "G": ["G1"]},
        {"S": 2, "A": 2, "G": 2, "K": 2},
        {"L": 2, "A": 5, "G": 9, "K": 3, "G1": 1},
    )
    out = leave_peer(room, "L")
    bad = _expect(out.refilled_source_child, "G", "refilled")
    bad += _expect(room.peers["G"].parent, "S", "parent of G")
    bad += _expect(room.peers["G"].children, ["G1"], "G keeps its subtree")
    bad += _expect(room.peers["A"].children, ["K"], "A after move")
    return bad


SCENARIOS = {
    "join: source has a free slot": scenario_join_free_source,
    "join: stronger newcomer displaces the weakest source child": scenario_join_displaces_weak_source_child,
    "join: highest-score parent with a free slot": scenario_join_best_parent,
    "leave: best child takes the leaver's place": scenario_leave_promotes_best_child,
    "leave: free rider under the source is replaced": scenario_leave_free_rider_refills_source,
}


# ---------------------------------------------------------------- heartbeat trials


def heartbeat_trial(seed: int, n_peers: int = 12) -> list[str]:
    """Silence one forwarding peer under a virtual clock; return the problems seen.

    Every other peer answers each PING 50 ms after it is sent.  The victim is
    silenced at a random moment; the trial checks the detection delay against
    the configured bound and that every orphan is told about an auxiliary feed
    before its new parent.
    """
    import random

    from fybrr.signaling.heartbeat import VirtualClock
    from fybrr.signaling.protocol import MsgType, WireMessage
    from fybrr.signaling.service import SignalingService

    rng = random.Random(f"hb:{seed}")
    clock = VirtualClock()
    svc = SignalingService(clock=clock)
    seqs: dict[str, int] = {}

    def send(pid, mtype, payload, room="r"):
        seqs[pid] = seqs.get(pid, 0) + 1
        return svc.handle(pid, WireMessage(mtype, room, pid, payload, seqs[pid]))

    send("S", MsgType.ROOM_CREATE, {"upload_bandwidth": 60.0})
    for i in range(n_peers):
        send(f"p{i}", MsgType.JOIN, {"upload_bandwidth": round(rng.uniform(5, 60), 2)})
    room = svc.registry.get("r")
    forwarders = sorted(p for p in room.active_ids() if p != "S" and room.peers[p].children)
    victim = rng.choice(forwarders)
    orphans = list(room.peers[victim].children)
    interval = svc.heartbeat.interval
    silenced = interval * rng.randint(2, 5) + rng.uniform(0.06, interval)

    problems: list[str] = []
    out: list = []
    t = 0.0
    while not svc.failures and t < silenced + 10 * interval:
        t += interval
        clock.now = t
        pushed = svc.heartbeat_tick()
        out.extend(pushed)
        for conn, msg in pushed:
            if msg.type is MsgType.PING and (conn != victim or t + 0.05 < silenced):
                clock.now = t + 0.05
                send(conn, MsgType.PONG, {"t": msg.payload["t"]})
        clock.now = t
    if not svc.failures:
        return [f"{victim} never declared failed"]
    (_, dead, when), *rest = svc.failures
    if dead != victim or rest:
        problems.append(f"unexpected failures {svc.failures}")
    delay = when - silenced
    if not 0 < delay <= svc.heartbeat.detection_bound:
        problems.append(f"detection took {delay:.3f}s")
    for o in orphans:
        kinds = [m.type for c, m in out if c == o and m.type in (MsgType.AUX_ACTIVATE, MsgType.PARENT_ASSIGN)]
        if kinds[:1] != [MsgType.AUX_ACTIVATE] or MsgType.PARENT_ASSIGN not in kinds:
            problems.append(f"orphan {o} saw {[k.value for k in kinds]}")
    from fybrr.model import validate_room

    problems.extend(validate_room(room))
    return problems


# ---------------------------------------------------------------- simulation oracles


def expected_subscriptions(result) -> dict[str, set[int]]:
    """Packets each node should have a trace entry for, rebuilt from snapshots.

    A node is subscribed to packet k when it is in the topology at emission
    time, its link has been up for ``connect_delay`` since it (re)appeared,
    and it has not crashed since.
    """
    import bisect

    cfg = result.config
    cd = round(cfg.connect_delay * 1_000_000)
    period = 1_000_000 / cfg.packet_rate
    source = result.room.source
    times = [t for t, _ in result.snapshots]
    crashes: dict[str, list[int]] = {}
    for pid, t in result.crashes:
        crashes.setdefault(pid, []).append(t)
    appeared: dict[str, int] = {}
    intervals: dict[str, list[tuple[int, int]]] = {}
    prev: dict = {}
    for t, snap in result.snapshots:
        for pid in snap:
            if pid not in prev:
                appeared[pid] = t
        for pid in prev:
            if pid not in snap:
                intervals.setdefault(pid, []).append((appeared.pop(pid), t))
        prev = snap
    end = round(cfg.duration * 1_000_000)
    for pid, start in appeared.items():
        intervals.setdefault(pid, []).append((start, end + 1))

    out: dict[str, set[int]] = {}
    for k in range(result.emitted):
        t = round(k * period)
        snap = result.snapshots[bisect.bisect_right(times, t) - 1][1]
        for pid in snap:
            if pid == source:
                continue
            start = next(s for s, e in intervals[pid] if s <= t < e)
            if t < start + cd:
                continue
            if any(start <= c <= t for c in crashes.get(pid, [])):
                continue
            out.setdefault(pid, set()).add(k)
    return out


def path_delay_us(result, pid: str) -> int:
    """Sum of base edge delays from the source to ``pid`` in the final snapshot."""
    from fybrr.sim.population import edge_delay_us

    cfg = result.config
    snap = result.snapshots[-1][1]
    total = 0
    while snap[pid] is not None:
        parent = snap[pid]
        total += edge_delay_us(cfg.seed, parent, pid, cfg.edge_delay_median_ms, cfg.edge_delay_sigma)
        pid = parent
    return total
