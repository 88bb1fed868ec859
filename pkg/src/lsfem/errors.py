"""Exception hierarchy shared by all lsfem modules."""


class LsfemError(Exception):
    """Base class for all errors raised by lsfem."""


class ParameterError(LsfemError, ValueError):
    """Invalid user input (mesh size, family, missing reference, ...)."""


class NearSingularError(LsfemError):
    """The stress block could not be factored reliably.

    Raised when a pivot of the symmetric factorization of ``A`` falls below
    the relative threshold. In the incompressible regime this is caused by
    the constant-trace stress mode; rerun with trace deflation enabled.
    """

    advice = "enable trace deflation (deflate_trace=True / --deflate-trace)"

    def __init__(self, message, min_pivot=None, threshold=None):
        super().__init__(f"{message}; {self.advice}")
        self.min_pivot = min_pivot
        self.threshold = threshold


class NumericalFailure(LsfemError):
    """An iterative kernel failed to converge."""

    def __init__(self, message, matrix=None, dump_path=None):
        super().__init__(message)
        self.matrix = matrix
        self.dump_path = dump_path


class PropertyViolation(LsfemError, AssertionError):
    """A structural property of the discrete problem does not hold."""
