"""Discrete-event simulation of one room under one overlay scheme.

Time is integer microseconds.  Packets are routed over the forwarding graph
as it stands when the source emits them (tree edges plus active auxiliary
feeds); each copy picks up the link's fixed base delay, per-hop noise and a
queueing delay that grows with the forwarder's load, and may be dropped when
the forwarder is asked to push more than its uplink carries.
"""

from __future__ import annotations

import heapq
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from ..errors import InvalidConfigError
from ..metrics import MetricReport, PacketTraceEntry, aggregate_report
from ..model import PeerId, PeerRecord, PeerState, RoomState, validate_room
from ..overlay import begin_departure, complete_departure, create_room, join_peer, make_peer
from ..signaling.heartbeat import HeartbeatMonitor
from .baseline import FANOUT, baseline_detach, baseline_join, baseline_reattach
from .capacity import capacity_demand, capacity_utilization
from .config import SimConfig
from .population import SOURCE_ID, draw_population, edge_delay_us

US = 1_000_000

# Event kinds, in tie-break priority at equal times: topology first, then
# heartbeats, then packets, so a packet sees every change made at its instant.
JOIN, LEAVE, FAIL, REPARENT, HEARTBEAT_TICK, PACKET_EMIT = range(6)
KIND_NAMES = ("JOIN", "LEAVE", "FAIL", "REPARENT", "HEARTBEAT_TICK", "PACKET_EMIT")


@dataclass
class Detection:
    peer: PeerId
    silenced_us: int
    detected_us: int  # heartbeat verdict
    handled_us: int  # departure processing began (later if another was in progress)
    orphans: list[PeerId]
    aux_before_reparent: bool


@dataclass
class SimResult:
    config: SimConfig
    trace: list[PacketTraceEntry]
    snapshots: list[tuple[int, dict[PeerId, Optional[PeerId]]]]
    report: MetricReport
    join_times: dict[PeerId, int]
    population: list[PeerRecord]
    room: RoomState
    detections: list[Detection] = field(default_factory=list)
    stranded: list[tuple[int, PeerId]] = field(default_factory=list)
    invalid: list[tuple[int, str]] = field(default_factory=list)
    emitted: int = 0
    crashes: list[tuple[PeerId, int]] = field(default_factory=list)  # (peer, silenced_us)

    def __iter__(self):
        # Allows ``trace, snapshots, report = run_simulation(cfg)``.
        return iter((self.trace, self.snapshots, self.report))


class _Sim:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.scheme = cfg.scheme
        self.fybrr = cfg.scheme == "FYBRR"
        self.rate = cfg.streaming_rate
        self.population = draw_population(cfg.seed, cfg.num_peers, cfg.streaming_rate, cfg.score, cfg.bucket_shares)
        self.by_id = {p.id: p for p in self.population}
        src = self.population[0]
        if not self.fybrr:
            src = make_peer(src.id, src.upload_bandwidth, self.rate, cfg.score)
            src.slots = FANOUT[self.scheme]
        self.room: RoomState = create_room(f"sim-{self.scheme.lower()}", src, self.rate, cfg.score)

        self.queue: list = []
        self.counter = 0
        self.now = 0
        self.pkt_rng = random.Random(f"packets:{cfg.seed}:{cfg.scheme}")
        self.churn_rng = random.Random(f"churn:{cfg.seed}")
        self.monitor = HeartbeatMonitor(cfg.heartbeat)

        self.ready: dict[PeerId, int] = {src.id: 0}
        self.silenced: dict[PeerId, int] = {}
        self.join_times: dict[PeerId, int] = {}
        self.base: dict[tuple[PeerId, PeerId], int] = {}
        self.trace: list[PacketTraceEntry] = []
        self.snapshots: list[tuple[int, dict]] = []
        self.detections: list[Detection] = []
        self.stranded: list[tuple[int, PeerId]] = []
        self.invalid: list[tuple[int, str]] = []
        self.emitted = 0
        self.crashes: list[tuple[PeerId, int]] = []

        # Departures are handled one at a time; later topology work waits.
        self.busy = False
        self.backlog: deque = deque()
        self.pending = None
        self.baseline_orphans: dict[int, list[PeerId]] = {}
        self.departed: list[PeerId] = []

        self._feeds = None

    # ------------------------------------------------------------ plumbing

    def push(self, t_us: int, kind: int, subject: Optional[PeerId] = None, payload=None):
        heapq.heappush(self.queue, (t_us, kind, self.counter, subject, payload))
        self.counter += 1

    def us(self, seconds: float) -> int:
        return round(seconds * US)

    def changed(self):
        self._feeds = None
        snap = {}
        for pid in self.room.active_ids():
            rec = self.room.peers[pid]
            snap[pid] = rec.parent if rec.parent is not None else self.room.active_aux.get(pid)
        self.snapshots.append((self.now, snap))
        if self.fybrr:
            for msg in validate_room(self.room):
                self.invalid.append((self.now, msg))
        for pid, par in snap.items():
            if par is None and pid != self.room.source and not self._orphan_waiting(pid):
                self.stranded.append((self.now, pid))

    def _orphan_waiting(self, pid: PeerId) -> bool:
        # Baseline orphans are legitimately unfed until their reattach event.
        return any(pid in v for v in self.baseline_orphans.values())

    # ------------------------------------------------------------ schedule

    def schedule(self):
        cfg = self.cfg
        for i, peer in enumerate(self.population[1:]):
            self.push(self.us((i + 1) * cfg.join_interval), JOIN, peer.id)
        end = self.us(cfg.duration)
        period = US / cfg.packet_rate
        k = 0
        while round(k * period) <= end:
            self.push(round(k * period), PACKET_EMIT, None, k)
            k += 1
        hb = self.us(cfg.heartbeat.interval)
        t = hb
        while t <= end:
            self.push(t, HEARTBEAT_TICK)
            t += hb
        churn_start = (len(self.population)) * cfg.join_interval
        for kind, rate in ((LEAVE, cfg.leave_rate), (FAIL, cfg.fail_rate), (JOIN, cfg.rejoin_rate)):
            if rate <= 0:
                continue
            t = churn_start
            rng = random.Random(f"churn-times:{cfg.seed}:{kind}")
            while True:
                t += rng.expovariate(rate)
                if t >= cfg.duration:
                    break
                self.push(self.us(t), kind, None, "churn")

    # ------------------------------------------------------------ topology

    def _pick(self, candidates: list[PeerId]) -> Optional[PeerId]:
        return self.churn_rng.choice(sorted(candidates)) if candidates else None

    def _live(self) -> list[PeerId]:
        return [p for p in self.room.active_ids() if p != self.room.source and p not in self.silenced]

    def do_join(self, pid: Optional[PeerId]):
        if pid is None:
            pid = self._pick([p for p in self.departed if not self.room.is_active(p)])
            if pid is None:
                return
            self.departed.remove(pid)
        self.join_times.setdefault(pid, self.now)
        if self.busy:
            self.backlog.append((JOIN, pid))
            return
        self._admit(pid)

    def _admit(self, pid: PeerId):
        base = self.by_id[pid]
        if self.fybrr:
            join_peer(self.room, base)
        else:
            baseline_join(self.room, base)
        self.ready[pid] = self.now + self.us(self.cfg.connect_delay)
        self.silenced.pop(pid, None)
        self.monitor.track(pid, self.now / US)
        self.changed()

    def do_leave(self, pid: Optional[PeerId], failed: bool):
        if pid is None:
            pid = self._pick(self._live())
            if pid is None:
                return
        if failed:
            # A crash is silent; the heartbeat monitor finds it later.
            self.silenced[pid] = self.now
            self.crashes.append((pid, self.now))
            return
        self.monitor.untrack(pid)
        self._depart(pid, failed=False)

    def _depart(self, pid: PeerId, failed: bool, silenced_us: Optional[int] = None,
                detected_us: Optional[int] = None):
        if not self.room.is_active(pid):
            return
        if self.busy:
            self.backlog.append((FAIL if failed else LEAVE, pid, silenced_us, detected_us))
            return
        delay = self.us(self.cfg.reparent_delay)
        orphans = list(self.room.peers[pid].children)
        if self.fybrr:
            self.busy = True
            self.pending = begin_departure(self.room, pid, failed=failed)
            fed = all(o in self.room.active_aux or self.room.peers[o].parent is not None for o in orphans)
            self.push(self.now + delay, REPARENT, pid)
        else:
            orphans = baseline_detach(self.room, pid, failed=failed)
            key = self.counter
            self.baseline_orphans[key] = orphans
            self.push(self.now + delay, REPARENT, pid, key)
            fed = not orphans
        self.departed.append(pid)
        self.silenced.pop(pid, None)
        if failed:
            self.detections.append(Detection(pid, silenced_us, detected_us, self.now, orphans, fed))
        self.changed()

    def do_reparent(self, pid: PeerId, key):
        if self.fybrr:
            complete_departure(self.room, self.pending)
            self.pending = None
            self.busy = False
            self.changed()
            while self.backlog and not self.busy:
                item = self.backlog.popleft()
                if item[0] == JOIN:
                    self._admit(item[1])
                else:
                    self._depart(item[1], failed=item[0] == FAIL, silenced_us=item[2], detected_us=item[3])
        else:
            orphans = self.baseline_orphans.pop(key)
            baseline_reattach(self.room, orphans)
            self.changed()

    def do_heartbeat(self):
        now_s = self.now / US
        ping, dead = self.monitor.tick(now_s)
        for pid in ping:
            if pid not in self.silenced:
                self.monitor.on_pong(pid, now_s)
        for pid in sorted(dead):
            self._depart(pid, failed=True, silenced_us=self.silenced.get(pid), detected_us=self.now)

    # ------------------------------------------------------------ packets

    def feeds(self) -> dict[PeerId, list[PeerId]]:
        if self._feeds is None:
            out = {p: list(self.room.peers[p].children) for p in self.room.active_ids()}
            for orphan, feeder in sorted(self.room.active_aux.items()):
                out.setdefault(feeder, []).append(orphan)
            self._feeds = out
        return self._feeds

    def edge(self, u: PeerId, v: PeerId) -> int:
        key = (u, v)
        d = self.base.get(key)
        if d is None:
            d = self.base[key] = edge_delay_us(
                self.cfg.seed, u, v, self.cfg.edge_delay_median_ms, self.cfg.edge_delay_sigma
            )
        return d

    def _targets(self, v: PeerId, feeds) -> list[PeerId]:
        """Peers ``v`` actually pushes to right now.

        A newcomer whose link is not up yet neither receives nor forwards;
        peers placed below it keep their previous feed until it is ready,
        which amounts to ``v`` serving them directly.  Silenced peers swallow
        the stream.
        """
        out = []
        todo = list(reversed(feeds.get(v, [])))
        while todo:
            c = todo.pop()
            if c in self.silenced:
                continue
            if self.ready.get(c, math.inf) > self.now:
                todo.extend(reversed(feeds.get(c, [])))
                continue
            out.append(c)
        return out

    def emit(self, seq: int):
        cfg = self.cfg
        self.emitted += 1
        feeds = self.feeds()
        rng = self.pkt_rng
        arrive: dict[PeerId, int] = {self.room.source: self.now}
        stack = [self.room.source]
        noise = cfg.edge_noise_ms * 1000.0
        contention = cfg.contention_ms * 1000.0
        while stack:
            v = stack.pop()
            targets = self._targets(v, feeds)
            if not targets:
                continue
            u = len(targets) * self.rate / self.by_id[v].upload_bandwidth
            drop = 1.0 - 1.0 / u if (cfg.overload_loss and u > 1.0) else 0.0
            queue_mean = contention * u ** 3
            for c in targets:
                if drop and rng.random() < drop:
                    continue
                d = self.edge(v, c)
                if noise:
                    d += round(rng.expovariate(1.0 / noise))
                if queue_mean:
                    d += round(rng.expovariate(1.0 / queue_mean))
                t = arrive[v] + d
                if c not in arrive or t < arrive[c]:
                    arrive[c] = t
                    stack.append(c)
        for pid in sorted(self.room.active_ids()):
            if pid == self.room.source or pid in self.silenced or self.ready.get(pid, math.inf) > self.now:
                continue
            t = arrive.get(pid)
            self.trace.append(PacketTraceEntry(pid, seq, self.now, t, t is not None))

    # ------------------------------------------------------------ loop

    def run(self) -> SimResult:
        self.changed()
        self.schedule()
        end = self.us(self.cfg.duration)
        while self.queue:
            t, kind, _, subject, payload = heapq.heappop(self.queue)
            if t > end:
                break
            self.now = t
            if kind == PACKET_EMIT:
                self.emit(payload)
            elif kind == JOIN:
                self.do_join(subject)
            elif kind == LEAVE:
                self.do_leave(subject, failed=False)
            elif kind == FAIL:
                self.do_leave(subject, failed=True)
            elif kind == REPARENT:
                self.do_reparent(subject, payload)
            elif kind == HEARTBEAT_TICK:
                self.do_heartbeat()
        util = capacity_demand(self.scheme, self.population)
        report = aggregate_report(self.trace, self.snapshots, self.join_times, utilization=util)
        return SimResult(
            config=self.cfg,
            trace=self.trace,
            snapshots=self.snapshots,
            report=report,
            join_times=self.join_times,
            population=self.population,
            room=self.room,
            detections=self.detections,
            stranded=self.stranded,
            invalid=self.invalid,
            emitted=self.emitted,
            crashes=self.crashes,
        )


def run_simulation(config: SimConfig) -> SimResult:
    """Run one scheme on the population and workload fixed by ``config.seed``."""
    problems = config.problems()
    if problems:
        raise InvalidConfigError("; ".join(problems))
    return _Sim(config).run()


def room_utilization(result: SimResult) -> float:
    return capacity_utilization(result.room)
