"""Exception types shared across the package."""

from __future__ import annotations


class InvalidArgument(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


class NumericalBlowup(NumericalError):
    """Raised when the solver state stops being finite."""

    def __init__(self, t: float, message: str | None = None):
        self.t = t
        super().__init__(message or f"non-finite solver state at t={t:.6g}")


class DegenerateDataError(ValueError):
    pass


class FormatError(ValueError):
    """Malformed binary file; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class ProtocolError(ConnectionError):
    pass


class StaleRoundError(ProtocolError):
    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"stale frame: expected round {expected}, got {got}")


class RoundFailed(RuntimeError):
    """A communication round aborted; the cause is chained."""

    def __init__(self, round_index: int, cause: BaseException):
        self.round_index = round_index
        super().__init__(f"round {round_index} failed: {cause}")
