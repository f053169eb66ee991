"""Exception types shared across the toolkit."""


class LVCoverageError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(LVCoverageError, ValueError):
    """Array shapes are inconsistent with the requested operation."""


class ParameterError(LVCoverageError, ValueError):
    """A configuration value is outside its legal range."""


class StatisticsError(LVCoverageError, ValueError):
    """Batch statistics are undefined (e.g. an empty polarity group)."""


class DomainError(LVCoverageError, ValueError):
    """A numeric argument is outside the function's domain."""


class UndefinedMetric(LVCoverageError, ArithmeticError):
    """A metric has no defined value (zero denominator, degenerate table).

    Raised instead of silently returning 0 or 1.
    """


class SampleError(LVCoverageError, ValueError):
    """A volume cannot supply the requested slice samples."""


class SpecError(LVCoverageError, ValueError):
    """A phantom specification is geometrically invalid."""


class MeasurementError(LVCoverageError, ValueError):
    """The hand-crafted detector could not measure a blood pool."""


class InputError(LVCoverageError, ValueError):
    """Caller-supplied data is missing required pieces."""


class TrainingDiverged(LVCoverageError, RuntimeError):
    """Training produced a non-finite gradient or objective."""


class ModelIOError(LVCoverageError, IOError):
    """A model or tensor container failed to load or verify."""
