"""Exception types shared across the package."""
from __future__ import annotations

from dataclasses import dataclass


class AggBidError(Exception):
    """Base class for every error raised by aggbid."""


@dataclass(frozen=True)
class Issue:
    """One violated invariant found while validating a configuration."""

    code: str
    field: str
    message: str
    station: int | None = None

    def __str__(self) -> str:
        where = f"station {self.station}: " if self.station is not None else ""
        return f"{self.code}: {where}{self.field}: {self.message}"


class ValidationError(AggBidError):
    """Raised with the complete list of violated invariants."""

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))

    @property
    def codes(self) -> set[str]:
        return {i.code for i in self.issues}


class NonConvexError(AggBidError):
    pass


class DimensionMismatch(AggBidError):
    pass


class NodeLimitExceeded(AggBidError):
    pass


class NotOptimal(AggBidError):
    pass


class HorizonMismatch(AggBidError):
    pass


class TooLarge(AggBidError):
    pass


class ParseError(AggBidError):
    """Input file problem; ``line`` is 1-based when known."""

    code = "ParseError"

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{self.code}: {prefix}{message}")


class MissingHour(ParseError):
    code = "MissingHour"

    def __init__(self, hour: int, line: int | None = None):
        self.hour = hour
        super().__init__(f"hour {hour} is missing", line)


class DuplicateHour(ParseError):
    code = "DuplicateHour"

    def __init__(self, hour: int, line: int | None = None):
        self.hour = hour
        super().__init__(f"hour {hour} appears more than once", line)


class NonNumeric(ParseError):
    code = "NonNumeric"


class UnknownField(ParseError):
    code = "UnknownField"


class MissingUnits(ParseError):
    code = "MissingUnits"
