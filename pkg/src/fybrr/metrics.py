"""Delivery ratio, latency, RFC 3550 interarrival jitter and startup delay.

Times inside traces are integer microseconds; latency and jitter are
reported in milliseconds, startup delay in seconds.
"""

from __future__ import annotations

import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import EmptyTraceError, InsufficientDataError

TRACE_HEADER = ("node_id", "seq", "emit_us", "arrive_us", "delivered")
SERIES_HEADER = ("metric", "node_id", "t_s", "value")


@dataclass(frozen=True)
class PacketTraceEntry:
    node: str
    seq: int
    emit_us: int
    arrive_us: Optional[int]
    delivered: bool

    @property
    def emit_time(self) -> float:
        return self.emit_us / 1e6

    @property
    def arrival_time(self) -> Optional[float]:
        return None if self.arrive_us is None else self.arrive_us / 1e6

    def row(self) -> tuple:
        return (self.node, self.seq, self.emit_us, "" if self.arrive_us is None else self.arrive_us, int(self.delivered))


def compute_pdr(received: int, lost: int) -> float:
    if received < 0 or lost < 0 or received + lost <= 0:
        raise EmptyTraceError("need at least one packet to compute a delivery ratio")
    return received / (received + lost)


def compute_jitter(trace: Sequence[PacketTraceEntry]) -> tuple[float, list[float]]:
    """Running interarrival jitter (ms) over consecutive delivered packets.

    Returns the final estimate and the estimate after every delivered packet
    from the second one on.
    """
    got = sorted((e for e in trace if e.delivered), key=lambda e: e.seq)
    if len(got) < 2:
        raise InsufficientDataError("jitter needs at least two delivered packets")
    j = 0.0
    series = []
    prev = got[0]
    for cur in got[1:]:
        d_us = (cur.arrive_us - prev.arrive_us) - (cur.emit_us - prev.emit_us)
        j += (abs(d_us) / 1000.0 - j) / 16.0
        series.append(j)
        prev = cur
    return j, series


def compute_latency(trace: Iterable[PacketTraceEntry]) -> tuple[list[float], float]:
    per_packet = [(e.arrive_us - e.emit_us) / 1000.0 for e in trace if e.delivered]
    if not per_packet:
        raise EmptyTraceError("no delivered packets")
    return per_packet, sum(per_packet) / len(per_packet)


def measure_startup_delay(trace: Iterable[PacketTraceEntry], peer_id: str, join_us: int) -> Optional[float]:
    """Seconds from join to the first delivered packet; ``None`` if nothing arrived."""
    first = min((e.arrive_us for e in trace if e.node == peer_id and e.delivered), default=None)
    if first is None:
        return None
    return max(0, first - join_us) / 1e6


@dataclass
class NodeMetrics:
    node: str
    received: int
    lost: int
    pdr: float
    mean_latency: Optional[float]
    mean_jitter: Optional[float]
    startup_delay: Optional[float]


@dataclass
class MetricReport:
    nodes: dict[str, NodeMetrics]
    leaves: list[str]
    mean_pdr: float
    leaf_mean_latency: float
    leaf_median_latency: float
    leaf_mean_jitter: float
    leaf_median_jitter: float
    mean_startup_delay: Optional[float]
    height: int
    utilization: float
    height_series: list[tuple[float, int]] = field(default_factory=list)
    series: list[tuple[str, str, int, float]] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "mean_pdr": self.mean_pdr,
            "leaf_mean_latency_ms": self.leaf_mean_latency,
            "leaf_median_latency_ms": self.leaf_median_latency,
            "leaf_mean_jitter_ms": self.leaf_mean_jitter,
            "leaf_median_jitter_ms": self.leaf_median_jitter,
            "mean_startup_delay_s": self.mean_startup_delay,
            "height": self.height,
            "utilization": self.utilization,
        }


def _per_second(values: Iterable[tuple[int, float]]) -> list[tuple[int, float]]:
    buckets: dict[int, list[float]] = defaultdict(list)
    for t_us, v in values:
        buckets[t_us // 1_000_000].append(v)
    return [(t, sum(vs) / len(vs)) for t, vs in sorted(buckets.items())]


def aggregate_report(
    trace: Sequence[PacketTraceEntry],
    snapshots: Sequence[tuple[int, dict[str, Optional[str]]]],
    join_times: Optional[dict[str, int]] = None,
    utilization: float = 0.0,
) -> MetricReport:
    """Per-node metrics plus leaf averages over the final topology snapshot.

    ``snapshots`` are ``(time_us, {node: parent})`` pairs in time order.
    Per-node jitter is the mean of the node's running jitter estimate.
    """
    join_times = join_times or {}
    by_node: dict[str, list[PacketTraceEntry]] = defaultdict(list)
    for e in trace:
        by_node[e.node].append(e)

    nodes: dict[str, NodeMetrics] = {}
    series: list[tuple[str, str, int, float]] = []
    for node, entries in sorted(by_node.items()):
        entries.sort(key=lambda e: e.seq)
        received = sum(1 for e in entries if e.delivered)
        lost = len(entries) - received
        lat = jit = None
        delivered = [e for e in entries if e.delivered]
        if delivered:
            _, lat = compute_latency(delivered)
            for t, v in _per_second((e.arrive_us, (e.arrive_us - e.emit_us) / 1000.0) for e in delivered):
                series.append(("latency_ms", node, t, v))
        if len(delivered) >= 2:
            _, js = compute_jitter(delivered)
            jit = sum(js) / len(js)
            for t, v in _per_second((e.arrive_us, j) for e, j in zip(delivered[1:], js)):
                series.append(("jitter_ms", node, t, v))
        for t, v in _per_second((e.emit_us, 1.0 if e.delivered else 0.0) for e in entries):
            series.append(("pdr", node, t, v))
        startup = None
        if node in join_times:
            startup = measure_startup_delay(delivered, node, join_times[node])
            if startup is not None:
                series.append(("startup_delay_s", node, join_times[node] // 1_000_000, startup))
        nodes[node] = NodeMetrics(node, received, lost, received / len(entries) if entries else 1.0, lat, jit, startup)

    final = snapshots[-1][1] if snapshots else {}
    parents = {p for p in final.values() if p is not None}
    leaves = sorted(n for n in final if n not in parents and final[n] is not None and n in nodes)

    def _stat(fn, vals):
        vals = [v for v in vals if v is not None]
        return fn(vals) if vals else float("nan")

    height_series = [(t / 1e6, _height(snap)) for t, snap in snapshots]
    for t, h in height_series:
        series.append(("height", "", int(t), float(h)))

    startups = [m.startup_delay for m in nodes.values() if m.startup_delay is not None]
    return MetricReport(
        nodes=nodes,
        leaves=leaves,
        mean_pdr=_stat(statistics.fmean, [m.pdr for m in nodes.values()]),
        leaf_mean_latency=_stat(statistics.fmean, [nodes[n].mean_latency for n in leaves]),
        leaf_median_latency=_stat(statistics.median, [nodes[n].mean_latency for n in leaves]),
        leaf_mean_jitter=_stat(statistics.fmean, [nodes[n].mean_jitter for n in leaves]),
        leaf_median_jitter=_stat(statistics.median, [nodes[n].mean_jitter for n in leaves]),
        mean_startup_delay=statistics.fmean(startups) if startups else None,
        height=height_series[-1][1] if height_series else 0,
        utilization=utilization,
        height_series=height_series,
        series=series,
    )


def _height(parents: dict[str, Optional[str]]) -> int:
    memo: dict[str, int] = {}

    def depth(n):
        if n in memo:
            return memo[n]
        chain = []
        cur = n
        while cur is not None and cur not in memo:
            chain.append(cur)
            cur = parents.get(cur)
        d = memo[cur] if cur is not None else -1
        for c in reversed(chain):
            d += 1
            memo[c] = d
        return memo[n]

    return max((depth(n) for n in parents), default=0)
