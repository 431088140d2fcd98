"""Exception types raised across the toolkit."""


class SymposeError(Exception):
    """Base class for all toolkit errors."""


class GeometryError(SymposeError, ValueError):
    """Invalid or degenerate geometric input (bad rotation, empty mesh, ...)."""


class AmbiguityError(SymposeError, ValueError):
    """A metric was asked for a ground-truth set it cannot enumerate."""


class FitError(SymposeError, RuntimeError):
    """Pose fitting failed or its input was degenerate."""


class DegenerateDataError(SymposeError, ValueError):
    """Data carries no usable signal (e.g. a flat heatmap histogram)."""


class ParseError(SymposeError, ValueError):
    """A file could not be parsed. The message names the line or byte offset."""
