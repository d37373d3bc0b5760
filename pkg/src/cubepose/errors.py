"""Exception types raised across the package."""


class CubeposeError(Exception):
    """Base class for all package errors."""


class InvalidQuaternionError(CubeposeError, ValueError):
    pass


class ConfigurationError(CubeposeError, ValueError):
    pass


class DegenerateGeometryError(CubeposeError, ValueError):
    """Tag and anchor (or deputy and target) are coincident."""


class NumericalFailureError(CubeposeError, ArithmeticError):
    pass


class DesignError(CubeposeError, ValueError):
    """LQR design failed (unstabilizable pair, bad weights)."""


class LogParseError(CubeposeError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LogOrderError(LogParseError):
    pass
