"""Exception types shared across the package."""


class FluidestError(Exception):
    """Base class for all package-specific errors."""


class GridTooSmallError(FluidestError):
    """Grid does not meet the minimum size required by a stencil."""


class DimensionMismatchError(FluidestError):
    """Two fields that must share dimensions do not."""


class DerivativeOrderError(FluidestError):
    """Requested derivative order exceeds the supported limit."""


class InvalidConfigError(FluidestError):
    """A configuration value violates its documented range."""


class CflError(FluidestError):
    """Advection displacement exceeds the stability bound for the grid."""


class ConvergenceError(FluidestError):
    """Iterative solve did not reach its tolerance.

    Carries the achieved residual and iteration count so callers can
    inspect (rather than silently accept) a failed solve.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NonFiniteLossError(FluidestError):
    """A loss evaluation produced NaN/Inf; carries diagnostic context."""

    def __init__(self, message, context=None):
        super().__init__(message)
        self.context = context or {}


class FileFormatError(FluidestError):
    """Malformed file content; reports the path and byte offset."""

    def __init__(self, path, message, offset=None):
        where = f"{path}" if offset is None else f"{path} (byte offset {offset})"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.offset = offset
