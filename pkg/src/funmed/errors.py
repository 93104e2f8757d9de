"""Exception and warning types raised by funmed."""


class FunmedError(Exception):
    """Base class for all package errors."""


class InputError(FunmedError, ValueError):
    """Invalid or inconsistent user input."""


class DomainError(InputError):
    """A value lies outside the interval on which an object is defined."""


class ConvergenceError(FunmedError, RuntimeError):
    """A fit (or too many bootstrap refits) failed to converge."""


class ConvergenceWarning(UserWarning):
    """Non-fatal fitting problem: non-convergence, separation, jitter fallback."""
