"""Exception types shared across the package."""


class MNDError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MNDError, ValueError):
    pass


class DomainError(MNDError, ValueError):
    """Input outside an operation's mathematical domain (sqrt of a negative, empty reduce)."""


class ConfigurationError(MNDError, ValueError):
    pass


class UsageError(MNDError, RuntimeError):
    pass


class CorruptCheckpointError(MNDError, ValueError):
    pass


class ChecksumError(CorruptCheckpointError):
    pass


class DivergenceError(MNDError, ArithmeticError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class EvaluationError(MNDError, ArithmeticError):
    """A function under gradient check produced a non-finite value."""
