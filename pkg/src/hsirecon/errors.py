"""Exception hierarchy shared by every hsirecon module."""


class HsiError(Exception):
    """Base class for all hsirecon errors."""


class DimensionError(HsiError, ValueError):
    """Operand shapes disagree."""


class ConfigError(HsiError, ValueError):
    """An argument or configuration value is outside its valid range."""


class UsageError(HsiError, RuntimeError):
    """An API was called in a way its contract forbids."""


class StateError(HsiError, RuntimeError):
    """An object is in a state that does not allow the requested action."""


class DegenerateInputError(HsiError, ValueError):
    """Input carries no usable signal (e.g. all zeros)."""


class FormatError(HsiError, ValueError):
    """A file does not match its on-disk format."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class GridError(HsiError, ValueError):
    """Two wavelength grids that must agree do not."""


class CalibrationError(HsiError, ValueError):
    """The calibration pipeline cannot produce a sensitivity table."""


class SweepValidationError(CalibrationError):
    """A monochromator sweep violates its acquisition protocol."""

    def __init__(self, message: str, wavelengths=()):
        super().__init__(message)
        self.wavelengths = list(wavelengths)


class MissingWavelengthError(SweepValidationError):
    pass


class DuplicateWavelengthError(SweepValidationError):
    pass


class UnexpectedWavelengthError(SweepValidationError):
    pass


class ExposureDriftError(SweepValidationError):
    pass


class GainError(SweepValidationError):
    pass


class CheckpointError(HsiError, ValueError):
    """A checkpoint does not match the requested model configuration."""

    def __init__(self, message: str, fields=()):
        super().__init__(message)
        self.fields = list(fields)


class DivergenceError(HsiError, FloatingPointError):
    """Training loss became non-finite."""

    def __init__(self, step: int, value: float):
        super().__init__(f"loss became non-finite ({value}) at step {step}")
        self.step = step
        self.value = value
