"""Exception hierarchy shared across the package."""


class SelbiasError(Exception):
    """Base class for all package-specific errors."""


class ArgumentError(SelbiasError, ValueError):
    """Invalid argument value or inconsistent shapes."""


class UnsupportedRegimeError(SelbiasError):
    """Requested computation outside the regime the formula covers."""


class NumericalDegeneracyError(SelbiasError):
    """A computation hit a numerically degenerate configuration."""


class IdentifiabilityError(SelbiasError):
    """The unpenalized block of a linear system is not identifiable."""


class DegeneratePropensityError(SelbiasError):
    """Sample mean of the propensity is too close to zero."""


class DegenerateKnotsError(SelbiasError):
    """Not enough distinct values to place spline knots."""


class DegeneratePilotError(SelbiasError):
    """Pilot regression produced a (near-)constant fit."""


class InsufficientSampleError(SelbiasError):
    """Too few draws to form the requested summary."""


class StudyAbortError(SelbiasError):
    """Too many replication failures; the study result is unusable."""
