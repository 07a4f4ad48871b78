"""Exception hierarchy shared by all modules."""


class MultihomogError(Exception):
    """Base class for every error raised by this package."""


class InvalidInput(MultihomogError, ValueError):
    pass


class DimensionMismatch(MultihomogError, ValueError):
    pass


class CapExceeded(MultihomogError):
    """The denominator search space exceeds the configured cap."""


class NoApproximation(MultihomogError):
    """No denominator below ceil(Q**m) met the strict residual bound.

    Only happens at exact boundary cases of the strict inequality
    (e.g. alpha = 1/2 with Q = 2).
    """


class ParseError(MultihomogError, ValueError):
    def __init__(self, message, position=None, text=None):
        self.position = position
        self.text = text
        if position is not None:
            message = f"{message} (at position {position})"
            if text is not None:
                message += f"\n  {text}\n  {' ' * position}^"
        super().__init__(message)


class PeriodicityViolation(ParseError):
    pass


class DegenerateMatrix(MultihomogError, ValueError):
    pass


class NonElliptic(MultihomogError):
    pass


class NoConvergence(MultihomogError):
    pass


class UnresolvedScale(MultihomogError):
    """Grid spacing too coarse for the finest oscillation."""


class DegenerateFit(MultihomogError, ValueError):
    pass


class WindowEmpty(MultihomogError):
    pass


class ConfigError(MultihomogError, ValueError):
    """Schema violation; ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")
