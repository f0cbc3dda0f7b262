"""Exception types shared across the package."""


class StrokeLabError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(StrokeLabError):
    """A file could not be parsed as the expected format."""


class ValidationError(StrokeLabError):
    """Parsed data violates a semantic constraint (ranges, ordering, ids)."""


class GeometryError(StrokeLabError):
    """Geometry is degenerate for the requested operation."""


class EmptyRasterError(StrokeLabError):
    """An operation that needs foreground pixels received a blank raster."""


class DimensionError(StrokeLabError):
    """Array or canvas dimensions do not agree."""


class ConvergenceError(StrokeLabError):
    """Iterative optimisation diverged or failed to make progress."""
