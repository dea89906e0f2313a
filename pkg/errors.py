"""
errors.py

Exception hierarchy shared by every module. Each error carries the process
exit code the command line maps it to (1 protocol failure, 2 usage, 3 I/O).
"""
from __future__ import annotations
from typing import Optional

EXIT_PROTOCOL = 1
EXIT_USAGE = 2
EXIT_IO = 3


class OTError(Exception):
    """Root of all errors raised by the oblivious transfer library."""
    exit_code: int = EXIT_PROTOCOL


class UsageError(OTError, ValueError):
    exit_code = EXIT_USAGE


class ZeroInverse(OTError, ZeroDivisionError):
    """Raised when the inverse of 0 is requested in F_p."""


class ExhaustedAttempts(OTError, RuntimeError):
    """A rejection sampler or prime search ran out of its candidate budget."""


class InvalidOverride(OTError, ValueError):
    exit_code = EXIT_USAGE


class ParseError(OTError, ValueError):
    """Malformed parameter file. `position` is a character offset, `path` a JSON key path."""
    exit_code = EXIT_IO

    def __init__(self, message: str, position: Optional[int] = None, path: Optional[str] = None):
        self.position = position
        self.path = path
        where = []
        if position is not None:
            where.append(f"pos {position}")
        if path:
            where.append(f"at {path}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class LengthMismatch(OTError, ValueError):
    pass


class InvalidStage(OTError, RuntimeError):
    """A round operation was called on a session in the wrong stage."""


class MalformedMessage(OTError, ValueError):
    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})" if offset is not None else message)


class TagMismatch(MalformedMessage):
    pass


class DegenerateD(OTError, ValueError):
    """d + c_{i,j} = 0 for some entry; Alice's invariants forbid it, so round 3 was corrupted."""


class RecoveryFailed(OTError, RuntimeError):
    pass


class DigestMismatch(OTError, ValueError):
    """Peers loaded different parameter files."""


class ChannelTimeout(OTError, TimeoutError):
    exit_code = EXIT_IO


class ConnectionClosed(OTError, ConnectionError):
    exit_code = EXIT_IO


class OutOfRange(OTError, ValueError):
    pass


class BudgetExceeded(OTError, ValueError):
    pass


class SessionFailed(OTError, RuntimeError):
    """A served run stopped on an error outside this hierarchy."""


class InconsistentDecision(OTError, RuntimeError):
    """A decision oracle answered yes for an instance but no for every restriction of it."""
