"""Simulation configuration and its YAML file form."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Any

import yaml

from ..errors import InvalidConfigError
from ..model import ScoreParams
from ..signaling.heartbeat import HeartbeatConfig

SCHEMES = ("FYBRR", "BINARY", "QUAD")

# Bandwidth buckets (Mbps) that map to 2, 3 and 4 slots.
BUCKETS = ((5.0, 15.0), (15.0, 50.0), (50.0, 100.0))


@dataclass
class SimConfig:
    seed: int = 0
    scheme: str = "FYBRR"
    num_peers: int = 57  # including the source
    streaming_rate: float = 2.5  # Mbps
    packet_rate: float = 20.0  # packets per second
    # Share of peers drawn from each bandwidth bucket; uniform within a bucket.
    bucket_shares: tuple[float, float, float] = (0.60, 0.25, 0.15)
    # Per-edge base delay: lognormal with this median (ms) and log-sigma.
    edge_delay_median_ms: float = 3.5
    edge_delay_sigma: float = 0.25
    # Per-hop, per-packet exponential noise (ms).
    edge_noise_ms: float = 0.02
    # Queueing at a forwarder: exponential with mean contention_ms * utilization**3.
    contention_ms: float = 0.1
    overload_loss: bool = True
    join_interval: float = 1.0  # seconds between consecutive joins
    connect_delay: float = 1.5  # seconds from join until the new peer's link carries media
    reparent_delay: float = 1.0  # seconds from detection until orphans have a new parent
    leave_rate: float = 0.0  # graceful departures per second after the join phase
    fail_rate: float = 0.0  # crashes per second after the join phase
    rejoin_rate: float = 0.0  # returns of departed peers per second
    duration: float = 90.0  # simulated seconds
    heartbeat: HeartbeatConfig = field(default_factory=HeartbeatConfig)
    score: ScoreParams = field(default_factory=ScoreParams)

    def __post_init__(self):
        if isinstance(self.heartbeat, dict):
            self.heartbeat = HeartbeatConfig(**self.heartbeat)
        if isinstance(self.score, dict):
            self.score = ScoreParams(**self.score)
        self.bucket_shares = tuple(self.bucket_shares)
        self.scheme = str(self.scheme).upper()
        problems = self.problems()
        if problems:
            raise InvalidConfigError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.scheme not in SCHEMES:
            out.append(f"scheme must be one of {SCHEMES}")
        if self.num_peers < 1:
            out.append("num_peers must be >= 1")
        for name in ("streaming_rate", "packet_rate", "edge_delay_median_ms", "duration", "join_interval"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be positive")
        for name in ("edge_delay_sigma", "edge_noise_ms", "contention_ms", "connect_delay",
                     "reparent_delay", "leave_rate", "fail_rate", "rejoin_rate"):
            if getattr(self, name) < 0:
                out.append(f"{name} must be >= 0")
        if len(self.bucket_shares) != 3 or min(self.bucket_shares) < 0 or abs(sum(self.bucket_shares) - 1) > 1e-9:
            out.append("bucket_shares must be three non-negative numbers summing to 1")
        return out

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["bucket_shares"] = list(self.bucket_shares)
        return d


def _section(data: dict, name: str) -> dict:
    sec = data.get(name) or {}
    if not isinstance(sec, dict):
        raise InvalidConfigError(f"section {name!r} must be a mapping")
    return sec


def load_config(path: str | os.PathLike | None = None, **overrides) -> SimConfig:
    """Read a YAML file with ``scoring``, ``heartbeat`` and ``simulation`` sections.

    Keyword overrides (``None`` values ignored) win over the file.
    """
    data: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise InvalidConfigError(f"cannot read {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise InvalidConfigError(f"{path} is not valid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise InvalidConfigError(f"{path}: top level must be a mapping")
        unknown = set(data) - {"scoring", "heartbeat", "simulation"}
        if unknown:
            raise InvalidConfigError(f"unknown sections: {sorted(unknown)}")
    sim = dict(_section(data, "simulation"))
    hb = dict(_section(data, "heartbeat"))
    for key in ("heartbeat_interval", "heartbeat_misses"):
        val = overrides.pop(key, None)
        if val is not None:
            hb["interval" if key == "heartbeat_interval" else "miss_threshold"] = val
    sim.update({k: v for k, v in overrides.items() if v is not None})
    fields = {f.name for f in dataclasses.fields(SimConfig)}
    unknown = set(sim) - fields
    if unknown:
        raise InvalidConfigError(f"unknown simulation keys: {sorted(unknown)}")
    try:
        return SimConfig(**sim, heartbeat=HeartbeatConfig(**hb), score=ScoreParams(**_section(data, "scoring")))
    except TypeError as exc:
        raise InvalidConfigError(str(exc)) from None
    except ValueError as exc:
        raise InvalidConfigError(str(exc)) from None


def dump_config(cfg: SimConfig) -> str:
    d = cfg.to_dict()
    return yaml.safe_dump(
        {"scoring": d.pop("score"), "heartbeat": d.pop("heartbeat"), "simulation": d},
        sort_keys=False,
    )
