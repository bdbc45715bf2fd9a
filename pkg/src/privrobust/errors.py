"""Exception hierarchy shared by every module."""


class PrivRobustError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(PrivRobustError, ValueError):
    """An argument is outside the domain an operation accepts."""


class KernelFormatError(ParameterError):
    """A kernel file failed to parse or validate.

    ``lineno`` points at the offending line of the source text when it can be
    located, otherwise it is ``None``.
    """

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + message)


class UndefinedPosteriorError(PrivRobustError, ArithmeticError):
    """The observed output has zero marginal probability."""


class DomainBoundError(PrivRobustError):
    """A reconstruction distance exceeded the declared data diameter D."""


class DivergenceError(PrivRobustError, RuntimeError):
    """An iterative optimizer blew up."""


class EstimationError(PrivRobustError):
    """An estimate is undefined (e.g. every recovery count was zero)."""


class ConfigError(PrivRobustError):
    """Experiment configuration is invalid. ``field`` names the culprit."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(message)
