"""Peer score and slot-budget arithmetic."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidParameterError
from .model import ScoreParams


@dataclass(frozen=True)
class PeerStats:
    upload_bandwidth: float
    latency: float = 0.0
    active_duration: float = 0.0
    num_of_failure: int = 0

    def __post_init__(self):
        if not self.upload_bandwidth > 0:
            raise InvalidParameterError("upload_bandwidth must be positive")
        if self.latency < 0 or self.active_duration < 0 or self.num_of_failure < 0:
            raise InvalidParameterError("latency, active_duration and num_of_failure must be >= 0")


def _check_rate(streaming_rate: float, params: ScoreParams) -> None:
    if not streaming_rate > 0:
        raise InvalidParameterError(f"streaming_rate must be positive, got {streaming_rate!r}")
    problems = params.problems()
    if problems:
        raise InvalidParameterError("; ".join(problems))


def compute_score(stats: PeerStats, streaming_rate: float, params: ScoreParams) -> float:
    """Weighted sum of serving capacity, inverse latency and stability."""
    _check_rate(streaming_rate, params)
    capacity = stats.upload_bandwidth / streaming_rate
    responsiveness = 1.0 / max(stats.latency, params.latency_floor)
    stability = stats.active_duration / max(stats.num_of_failure, params.failure_floor)
    return params.k1 * capacity + params.k2 * responsiveness + params.k3 * stability


def initial_score(upload_bandwidth: float, streaming_rate: float, params: ScoreParams) -> float:
    """Score at join time, before latency or uptime have been observed."""
    _check_rate(streaming_rate, params)
    if not upload_bandwidth > 0:
        raise InvalidParameterError("upload_bandwidth must be positive")
    return params.k1 * (upload_bandwidth / streaming_rate)


def compute_slots(upload_bandwidth: float, streaming_rate: float) -> int:
    if not upload_bandwidth > 0 or not streaming_rate > 0:
        raise InvalidParameterError("bandwidth and streaming rate must be positive")
    return math.floor(upload_bandwidth / streaming_rate)


def bucketed_slots(upload_bandwidth: float, params: ScoreParams) -> int:
    """Slots from the 5-15 / 15-50 / 50-100 Mbps table, clamped outside 5-100 Mbps."""
    if not upload_bandwidth > 0:
        raise InvalidParameterError("upload_bandwidth must be positive")
    if upload_bandwidth < 5.0:
        return params.min_slots
    if upload_bandwidth > 100.0:
        return params.max_slots
    if upload_bandwidth < 15.0:
        return 2
    if upload_bandwidth < 50.0:
        return 3
    return 4


def peer_slots(upload_bandwidth: float, streaming_rate: float, params: ScoreParams) -> int:
    """Slot budget under the room's configured ``slot_mode``.

    Ratio mode never hands out zero slots: every leaf must be able to
    adopt an orphan, otherwise departures could strand a subtree.
    """
    if params.slot_mode == "bucketed":
        return bucketed_slots(upload_bandwidth, params)
    raw = compute_slots(upload_bandwidth, streaming_rate)
    return min(max(raw, 1), params.max_slots)
