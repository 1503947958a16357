"""Exception hierarchy shared by every module.

Each class carries the process exit code the command-line front end uses
when the error escapes a subcommand.
"""


class MMGFError(Exception):
    exit_code = 1


class InputError(MMGFError, ValueError):
    """Malformed arguments, files or configuration."""

    exit_code = 2


class SingularityError(InputError):
    """A degree normalization would divide by zero."""


class DomainError(InputError):
    """An elementwise map is undefined for some entry."""


class CapacityError(MMGFError, MemoryError):
    """A dense materialization would exceed the configured size cap."""

    exit_code = 3


class ConvergenceError(MMGFError, ArithmeticError):
    """An iterative eigensolver ran out of iterations."""

    exit_code = 4

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
