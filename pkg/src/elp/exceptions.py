"""Exception hierarchy shared by every ELP module."""


class ELPError(Exception):
    """Base class for all errors raised by this package."""


class InvalidSeries(ELPError, ValueError):
    pass


class ShapeError(ELPError, ValueError):
    pass


class InvalidInput(ELPError, ValueError):
    pass


class InvalidParam(ELPError, ValueError):
    pass


class PairingError(ELPError, ValueError):
    pass


class NumericsError(ELPError, FloatingPointError):
    pass


class InsufficientHistory(ELPError, ValueError):
    pass


class InvalidDataset(ELPError, ValueError):
    pass


class DegenerateInput(ELPError, ValueError):
    pass


class ParseError(ELPError, ValueError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class GapError(ParseError):
    pass


class PhaseError(ELPError, RuntimeError):
    """Failure inside one pipeline phase; ``phase`` names it."""

    def __init__(self, phase, cause):
        self.phase = phase
        self.cause = cause
        super().__init__(f"[{phase}] {type(cause).__name__}: {cause}")
