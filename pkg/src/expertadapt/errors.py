"""Exception hierarchy shared by the library and the command line."""


class ExpertAdaptError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(ExpertAdaptError, ValueError):
    exit_code = 2


class DataError(ExpertAdaptError):
    """A dataset could not be read, written or generated."""

    exit_code = 3


class ValidationError(DataError, ValueError):
    """Data violates a structural invariant (shape, binarity, roster...)."""


class UnknownExpertError(DataError, KeyError):
    def __str__(self):
        # KeyError repr-quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class NumericalError(ExpertAdaptError, ArithmeticError):
    """Training produced a non-finite loss.

    ``checkpoint`` holds the state at the time of the failure, for diagnosis.
    """

    exit_code = 4

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class MetricUndefinedError(ExpertAdaptError, ValueError):
    """A surface distance was requested for an empty mask."""
