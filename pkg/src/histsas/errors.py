"""Exception hierarchy shared across the package.

The CLI maps each family onto a distinct exit code.
"""


class HistsasError(Exception):
    """Base class for all package errors."""


class ConfigurationError(HistsasError, ValueError):
    """Invalid hyperparameters, geometry, or configuration file content."""


class DimensionError(HistsasError, ValueError):
    """Tensor shapes that do not agree."""


class InputError(HistsasError, ValueError):
    """Bad data handed to an operation (labels out of range, missing factors)."""


class UsageError(HistsasError, RuntimeError):
    """An API called in a state where the call is not allowed."""


class NumericalError(HistsasError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class DivergenceError(NumericalError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss = {loss!r}")
        self.epoch = epoch
        self.loss = loss
