"""Newline-delimited JSON wire format for the signaling channel."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any, Optional

from ..errors import FybrrError

PROTOCOL_VERSION = 1


class MsgType(str, enum.Enum):
    JOIN = "JOIN"
    JOIN_ACK = "JOIN_ACK"
    LEAVE = "LEAVE"
    LEAVE_ACK = "LEAVE_ACK"
    PING = "PING"
    PONG = "PONG"
    PARENT_ASSIGN = "PARENT_ASSIGN"
    AUX_ACTIVATE = "AUX_ACTIVATE"
    AUX_RELEASE = "AUX_RELEASE"
    STATS_UPDATE = "STATS_UPDATE"
    ROOM_CREATE = "ROOM_CREATE"
    ROOM_CREATED = "ROOM_CREATED"
    ERROR = "ERROR"


# Request -> the non-error response that terminates it.
TERMINAL = {
    MsgType.JOIN: (MsgType.JOIN_ACK, MsgType.ROOM_CREATED),
    MsgType.LEAVE: (MsgType.LEAVE_ACK,),
    MsgType.ROOM_CREATE: (MsgType.ROOM_CREATED,),
    MsgType.STATS_UPDATE: (MsgType.STATS_UPDATE,),
}


class ProtocolError(FybrrError):
    code = "bad-message"


@dataclass
class WireMessage:
    type: MsgType
    room_id: str = ""
    peer_id: str = ""
    payload: dict[str, Any] = field(default_factory=dict)
    seq: int = 0
    v: int = PROTOCOL_VERSION

    def to_dict(self) -> dict:
        return {
            "v": self.v,
            "type": self.type.value,
            "room_id": self.room_id,
            "peer_id": self.peer_id,
            "seq": self.seq,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WireMessage":
        if not isinstance(d, dict):
            raise ProtocolError("message must be an object")
        if d.get("v") != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported protocol version {d.get('v')!r}")
        try:
            mtype = MsgType(d["type"])
        except (KeyError, ValueError):
            raise ProtocolError(f"unknown message type {d.get('type')!r}") from None
        seq = d.get("seq", 0)
        payload = d.get("payload", {})
        if not isinstance(seq, int) or isinstance(seq, bool):
            raise ProtocolError("seq must be an integer")
        if not isinstance(payload, dict):
            raise ProtocolError("payload must be an object")
        return cls(
            type=mtype,
            room_id=str(d.get("room_id", "")),
            peer_id=str(d.get("peer_id", "")),
            payload=payload,
            seq=seq,
        )


def encode(msg: WireMessage) -> bytes:
    return json.dumps(msg.to_dict(), sort_keys=True, separators=(",", ":")).encode() + b"\n"


def decode(line: bytes | str) -> WireMessage:
    try:
        d = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"malformed record: {exc}") from None
    return WireMessage.from_dict(d)


def error(code: str, text: str, re: Optional[int] = None) -> dict:
    out = {"code": code, "text": text}
    if re is not None:
        out["re"] = re
    return out
