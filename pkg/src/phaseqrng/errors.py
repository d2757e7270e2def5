"""Exception types raised across the toolkit.

All of them subclass ``ValueError`` so callers that only care about "bad
input" can catch that.
"""


class QrngError(ValueError):
    pass


class EmptyInputError(QrngError):
    pass


class SingularModelError(QrngError):
    pass


class DegenerateFitError(QrngError):
    pass


class InfiniteRatioError(QrngError):
    pass


class InconsistentMeasurementError(QrngError):
    pass


class UnboundedOptimumError(QrngError):
    pass


class DimensionError(QrngError):
    pass


class InsufficientEntropyError(QrngError):
    pass


class OverExtractionError(QrngError):
    pass


class ExactnessError(ArithmeticError):
    """A floating-point convolution failed its rounding-margin check."""


class UndefinedCorrelationError(QrngError):
    pass


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
