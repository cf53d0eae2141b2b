"""Exception hierarchy shared across netfence modules."""

from __future__ import annotations


class NetfenceError(Exception):
    """Base class for every domain error raised by netfence."""


class EmptyInput(NetfenceError, ValueError):
    pass


class ApSetMismatch(NetfenceError, ValueError):
    pass


class TooFew(NetfenceError, ValueError):
    pass


class MetricMismatch(NetfenceError, TypeError):
    pass


class NonMonotoneTime(NetfenceError, ValueError):
    pass


class MalformedMac(NetfenceError, ValueError):
    # Never put the offending value in the message: it may be a real MAC.
    pass


class StaleEvent(NetfenceError, ValueError):
    pass


class RssiOutOfRange(NetfenceError, ValueError):
    pass


class WeakSalt(NetfenceError, ValueError):
    pass


class EmptyWindow(NetfenceError, LookupError):
    pass


class UnknownTopic(NetfenceError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class ConfigError(NetfenceError):
    pass


class ParseError(NetfenceError):
    """Rule text could not be parsed.

    Carries the 1-based ``line`` and ``column`` of the offending token and the
    set of token kinds that would have been accepted there.
    """

    def __init__(self, message: str, line: int, column: int, expected: frozenset[str] = frozenset()):
        self.line = line
        self.column = column
        self.expected = frozenset(expected)
        detail = f"{message} at line {line}, column {column}"
        if self.expected:
            detail += f" (expected one of: {', '.join(sorted(self.expected))})"
        super().__init__(detail)
