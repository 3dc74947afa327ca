"""Exception hierarchy shared by all processing stages."""


class FrontendError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(FrontendError, ValueError):
    """Invalid configuration or inconsistent shapes/channel counts."""


class NumericalError(FrontendError, ArithmeticError):
    """A linear solve or an optimisation step produced unusable numbers."""


class SingularSystemError(NumericalError):
    def __init__(self, message, *, index=None, condition=None):
        super().__init__(message)
        self.index = index
        self.condition = condition


class DivergenceError(NumericalError):
    """Training loss became non-finite; ``trace`` holds the losses so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = list(trace)
