"""Server-initiated PING/PONG liveness tracking with a miss threshold."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Hashable, Optional

from ..errors import InvalidParameterError


@dataclass(frozen=True)
class HeartbeatConfig:
    interval: float = 2.0
    miss_threshold: int = 2

    def __post_init__(self):
        if not self.interval > 0:
            raise InvalidParameterError("heartbeat interval must be positive")
        if self.miss_threshold < 1:
            raise InvalidParameterError("miss_threshold must be >= 1")

    @property
    def detection_bound(self) -> float:
        """Worst-case time from the last PONG to the failure verdict."""
        return self.interval * (self.miss_threshold + 1)


class WallClock:
    def __call__(self) -> float:
        return time.monotonic()


class VirtualClock:
    def __init__(self, start: float = 0.0):
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, dt: float) -> float:
        self.now += dt
        return self.now


class HeartbeatMonitor:
    """Counts consecutive unanswered PINGs per tracked key.

    Call :meth:`tick` once per interval.  A PING still unanswered at the next
    tick is a miss; ``miss_threshold`` consecutive misses declare the key dead.
    Any PONG clears the count.
    """

    def __init__(self, config: HeartbeatConfig):
        self.config = config
        self.outstanding: dict[Hashable, float] = {}
        self.misses: dict[Hashable, int] = {}
        self.last_pong: dict[Hashable, Optional[float]] = {}

    def track(self, key: Hashable, now: Optional[float] = None) -> None:
        self.misses.setdefault(key, 0)
        self.last_pong.setdefault(key, now)

    def untrack(self, key: Hashable) -> None:
        self.outstanding.pop(key, None)
        self.misses.pop(key, None)
        self.last_pong.pop(key, None)

    def on_pong(self, key: Hashable, now: float) -> None:
        if key not in self.misses:
            return
        self.outstanding.pop(key, None)
        self.misses[key] = 0
        self.last_pong[key] = now

    def tick(self, now: float, keys=None) -> tuple[list, list]:
        """Return ``(ping, dead)``: keys to PING now and keys declared failed."""
        ping, dead = [], []
        for key in list(self.misses if keys is None else keys):
            if key not in self.misses:
                continue
            if key in self.outstanding:
                self.misses[key] += 1
                if self.misses[key] >= self.config.miss_threshold:
                    dead.append(key)
                    self.untrack(key)
                    continue
            self.outstanding[key] = now
            ping.append(key)
        return ping, dead
