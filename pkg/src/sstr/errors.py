"""Exception types raised across the package."""


class SstrError(Exception):
    """Base class for all package errors."""


class OutOfRange(SstrError, ValueError):
    """A parameter violates its admissible range.

    ``field`` names the offending parameter so callers (and the CLI error
    record) can report it without parsing the message.
    """

    def __init__(self, field, message=None):
        self.field = field
        super().__init__(message or f"{field} out of range")


class ShapeMismatch(SstrError, ValueError):
    pass


class DegenerateDistribution(SstrError, ValueError):
    pass


class ZfUnavailable(SstrError, ArithmeticError):
    pass


class NoConvergence(SstrError, ArithmeticError):
    def __init__(self, message, best=None):
        self.best = best
        super().__init__(message)


class InsufficientTrials(SstrError, ValueError):
    pass


class ParseError(SstrError, ValueError):
    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
