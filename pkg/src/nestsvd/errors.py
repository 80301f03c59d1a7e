"""Exception types shared across the package."""


class InputError(ValueError):
    """Arguments violate a documented precondition."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class TrainingAborted(RuntimeError):
    """Too many anomalous iterations; the run was stopped."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}
