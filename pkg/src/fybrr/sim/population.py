"""Peer populations and per-edge delay draws."""

from __future__ import annotations

import math
import random

from ..model import PeerRecord, ScoreParams
from ..overlay import make_peer
from .config import BUCKETS

SOURCE_ID = "S"


def draw_bandwidths(rng: random.Random, n: int, shares) -> list[float]:
    out = []
    for _ in range(n):
        u = rng.random()
        idx = 0 if u < shares[0] else 1 if u < shares[0] + shares[1] else 2
        lo, hi = BUCKETS[idx]
        out.append(rng.uniform(lo, hi))
    return out


def draw_population(
    seed: int,
    num_peers: int,
    streaming_rate: float,
    params: ScoreParams,
    shares=(0.60, 0.25, 0.15),
) -> list[PeerRecord]:
    """Source first, then ``num_peers - 1`` joiners named ``p00``, ``p01``, ..."""
    rng = random.Random(f"population:{seed}")
    bws = draw_bandwidths(rng, num_peers, shares)
    width = max(2, len(str(num_peers - 1)))
    ids = [SOURCE_ID] + [f"p{i:0{width}d}" for i in range(num_peers - 1)]
    return [make_peer(pid, bw, streaming_rate, params) for pid, bw in zip(ids, bws)]


def edge_delay_us(seed: int, parent: str, child: str, median_ms: float, sigma: float) -> int:
    """Base one-way delay of the link parent -> child, fixed for the whole run."""
    rng = random.Random(f"edge:{seed}:{parent}:{child}")
    return max(1, round(median_ms * math.exp(sigma * rng.gauss(0.0, 1.0)) * 1000))
