"""Exception types raised across the package."""


class FoslsError(Exception):
    """Base class for all package errors."""


class ShapeError(FoslsError, ValueError):
    """An input array does not match the expected dimensions."""


class ConfigError(FoslsError, ValueError):
    """Invalid configuration value.

    ``path`` names the offending field (e.g. ``"train.lr0"``) when known.
    """

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class SamplingError(FoslsError, RuntimeError):
    """Rejection sampling could not produce points."""


class UnsupportedGeometryError(FoslsError, ValueError):
    pass


class DivergenceError(FoslsError, FloatingPointError):
    """Training produced a non-finite loss or gradient.

    Carries whatever state was last known to be finite so callers can
    persist partial results.
    """

    def __init__(self, message, step=None, params=None, history=None):
        super().__init__(message)
        self.step = step
        self.params = params
        self.history = history
