"""Exception hierarchy.

Two families matter to callers: :class:`InputError` (bad data, config or
files; the CLI exits with status 2) and :class:`NumericError` (a computation
went wrong; status 3).
"""


class OnestepError(Exception):
    """Base class for every error raised by this package."""


class InputError(OnestepError, ValueError):
    """Invalid input data, configuration or file."""


class NumericError(OnestepError, ArithmeticError):
    """A numerical computation failed or produced a non-finite value."""


class ConfigError(InputError):
    pass


class DataError(InputError):
    pass


class ShapeError(InputError):
    pass


class DomainError(InputError):
    pass


class InsufficientDrawsError(InputError):
    pass


class InsufficientDataError(InputError):
    pass


class PositivityError(InputError):
    """A propensity value lies outside the configured overlap bounds."""

    def __init__(self, message, draw=None, index=None):
        super().__init__(message)
        self.draw = draw
        self.index = index


class ParseError(InputError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class RngDegenerateError(NumericError):
    pass


class DegenerateError(NumericError):
    pass


class InvariantViolationError(NumericError):
    pass


class NonconvergenceError(NumericError):
    def __init__(self, message, score_norm=None):
        super().__init__(message)
        self.score_norm = score_norm


class SingularDesignError(NumericError):
    pass


class ExperimentAbort(NumericError):
    pass
