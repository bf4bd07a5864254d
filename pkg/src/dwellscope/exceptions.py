"""Exception hierarchy for dwellscope."""


class DwellscopeError(Exception):
    """Base class for all errors raised by this package."""


class InvalidMac(DwellscopeError, ValueError):
    pass


class ClosedDay(DwellscopeError, ValueError):
    """Raised for dates on which the museum does not open (Tuesdays)."""


class UnsortedInput(DwellscopeError, ValueError):
    pass


class EmptyVisit(DwellscopeError, ValueError):
    pass


class EmptyInput(DwellscopeError, ValueError):
    pass


class LengthMismatch(DwellscopeError, ValueError):
    pass


class DegenerateInput(DwellscopeError, ValueError):
    pass


class NoSamples(DwellscopeError, ValueError):
    """No usable samples; ``excluded`` counts the samples that were dropped."""

    def __init__(self, message, excluded=0):
        super().__init__(message)
        self.excluded = excluded


class InsufficientData(DwellscopeError, ValueError):
    pass


class FlatCurve(DwellscopeError, ValueError):
    pass


class ConfigError(DwellscopeError, ValueError):
    pass
