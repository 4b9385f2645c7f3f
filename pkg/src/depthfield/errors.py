"""Exception types raised by the depthfield library."""


class DepthFieldError(Exception):
    """Base class for all library errors."""


class InvalidCoordinateError(DepthFieldError):
    """Query coordinate is non-finite or outside the image domain."""


class ShapeError(DepthFieldError):
    """Array dimensions are inconsistent with the declared structure."""


class InvalidDepthError(DepthFieldError):
    """Depth value violates positivity."""


class NonDifferentiableError(DepthFieldError):
    """Query lies in a region where the field has no classical derivative."""


class DegenerateSurfaceError(DepthFieldError):
    """Surface tangents are (numerically) parallel; no normal exists."""


class DegenerateRangeError(DepthFieldError):
    """Quantile range collapsed; normalization is undefined."""


class SingularAlignmentError(DepthFieldError):
    """Scale-shift normal equations are singular (constant prediction)."""


class ZeroMassError(DepthFieldError):
    """A weight or energy map has no positive mass to sample from."""


class FormatError(DepthFieldError):
    """Malformed on-disk data. Carries the byte offset where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingDivergedError(DepthFieldError):
    """Optimization diverged beyond the configured abort threshold."""


class FixtureError(DepthFieldError):
    """Unknown fixture kind or invalid fixture dimensions."""
