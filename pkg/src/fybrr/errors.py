"""Exception hierarchy shared by the engine, the service and the simulator."""


class FybrrError(Exception):
    """Base class; ``code`` is the wire-level error code."""

    code = "internal"


class InvalidParameterError(FybrrError, ValueError):
    code = "invalid-parameter"


class RoomNotFoundError(FybrrError, KeyError):
    code = "room-not-found"


class DuplicateRoomError(FybrrError):
    code = "duplicate-room"


class DuplicatePeerError(FybrrError):
    code = "duplicate-peer"


class UnknownPeerError(FybrrError, KeyError):
    code = "unknown-peer"


class NoCapacityError(FybrrError):
    code = "no-capacity"


class EmptyChildrenError(FybrrError):
    code = "empty-children"


class SourceCannotLeaveError(FybrrError):
    code = "source-cannot-leave"


class SourceHasNoAuxError(FybrrError):
    code = "source-has-no-aux"


class NoLiveCandidateError(FybrrError):
    code = "no-live-candidate"


class CorruptLogError(FybrrError):
    code = "corrupt-log"

    def __init__(self, index: int, reason: str):
        super().__init__(f"record {index}: {reason}")
        self.index = index
        self.reason = reason


class InsufficientDataError(FybrrError, ValueError):
    code = "insufficient-data"


class EmptyTraceError(FybrrError, ValueError):
    code = "empty-trace"


class InvalidConfigError(FybrrError, ValueError):
    code = "invalid-config"
