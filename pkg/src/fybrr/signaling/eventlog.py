"""Append-only per-room event logs and deterministic replay."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Optional
from urllib.parse import quote

from ..errors import CorruptLogError, FybrrError

OPS = ("ROOM_CREATE", "JOIN", "LEAVE", "FAIL", "STATS_UPDATE", "CLOSE")


def log_path(log_dir: str | os.PathLike, room_id: str) -> Path:
    return Path(log_dir) / f"{quote(room_id, safe='')}.log"


class EventLog:
    """Accepted mutations in arrival order; optionally mirrored to one file per room."""

    def __init__(self, log_dir: Optional[str | os.PathLike] = None):
        self.records: list[dict] = []
        self.log_dir = Path(log_dir) if log_dir is not None else None
        if self.log_dir is not None:
            self.log_dir.mkdir(parents=True, exist_ok=True)

    def append(self, op: str, room_id: str, peer_id: str, payload: dict) -> dict:
        rec = {"i": len(self.records), "op": op, "room_id": room_id, "peer_id": peer_id, "payload": payload}
        self.records.append(rec)
        if self.log_dir is not None:
            line = json.dumps(rec, sort_keys=True, separators=(",", ":"))
            with open(log_path(self.log_dir, room_id), "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        return rec

    def for_room(self, room_id: str) -> list[dict]:
        return [r for r in self.records if r["room_id"] == room_id]


def read_log(path: str | os.PathLike) -> list[dict]:
    """Parse a log file; malformed lines raise :class:`CorruptLogError` with their index."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for idx, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CorruptLogError(idx, f"not JSON: {exc.msg}") from None
    return out


def check_record(idx: int, rec) -> None:
    if not isinstance(rec, dict):
        raise CorruptLogError(idx, "record is not an object")
    for key in ("op", "room_id", "peer_id", "payload"):
        if key not in rec:
            raise CorruptLogError(idx, f"missing field {key!r}")
    if rec["op"] not in OPS:
        raise CorruptLogError(idx, f"unknown op {rec['op']!r}")
    if not isinstance(rec["payload"], dict):
        raise CorruptLogError(idx, "payload is not an object")


def replay_event_log(records: Iterable[dict], **service_kwargs):
    """Rebuild every room named in ``records``; returns ``{room_id: RoomState}``."""
    from .service import SignalingService

    svc = SignalingService(**service_kwargs)
    for idx, rec in enumerate(records):
        check_record(idx, rec)
        try:
            svc.apply(rec["op"], rec["room_id"], rec["peer_id"], rec["payload"])
        except FybrrError as exc:
            raise CorruptLogError(idx, f"{rec['op']} rejected on replay: {exc}") from None
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptLogError(idx, f"bad payload: {exc!r}") from None
    return svc.registry.rooms
