"""Exception hierarchy shared by all modules."""


class TrihjmError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(TrihjmError, ValueError):
    """Input data or parameters violate a documented contract."""


class CalibrationError(TrihjmError, RuntimeError):
    """An estimation step failed to converge or is not identified."""


class SimulationError(TrihjmError, RuntimeError):
    """A Monte Carlo run produced non-finite state on too many paths."""


class CalibrationWarning(UserWarning):
    """An estimate is usable but outside its expected range."""
