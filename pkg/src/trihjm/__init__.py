"""Three-curve HJM engine: nominal and real forward curves plus a corporate
credit spread, linked by inflation and credit exchange rates."""

from .errors import CalibrationError, SimulationError, TrihjmError, ValidationError

__version__ = "0.1.0"

__all__ = ["CalibrationError", "SimulationError", "TrihjmError", "ValidationError", "__version__"]
