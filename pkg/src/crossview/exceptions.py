"""Exception types raised across the package.

Everything derives from ``ValueError`` so callers that only care about
"bad input" can catch one thing; the CLI maps these to exit code 1.
"""


class ConfigurationError(ValueError):
    """Invalid configuration, class registry, or parameter combination."""


class GeometryError(ValueError):
    """Input geometry violates a precondition (footprint, heights, shapes)."""


class DegenerateViewpointError(GeometryError):
    """A camera sits inside an occupied voxel."""

    def __init__(self, message, frame=None):
        if frame is not None:
            message = f"frame {frame}: {message}"
        super().__init__(message)
        self.frame = frame


class InvariantViolation(AssertionError):
    """An internal invariant check failed. Always a bug, never bad input."""


class FormatError(ValueError):
    """A binary or image file does not match its declared layout."""
