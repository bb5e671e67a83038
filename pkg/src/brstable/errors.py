"""Exception types shared across the package."""
from __future__ import annotations


class DomainError(ValueError):
    """An operation was applied outside the space where it is defined."""


class NumericFailure(ArithmeticError):
    """A root-finder, quadrature or Monte Carlo estimate did not converge."""


class ConfigError(ValueError):
    """Invalid scenario document.

    Args:
        message: human-readable description.
        key: the offending key, when the error is tied to one.
        line: 1-based line of a parse error.
        column: 1-based column of a parse error.
    """

    def __init__(self, message: str, key: str | None = None,
                 line: int | None = None, column: int | None = None):
        super().__init__(message)
        self.key = key
        self.line = line
        self.column = column


class BudgetExceeded(RuntimeError):
    """A planned run would exceed the configured population budget."""


class ExplosionError(RuntimeError):
    """A particle population reached its cap.

    The partial state is kept so the caller can report how far the run got.

    Args:
        message: description.
        partial: the measure (or list of generations) reached before the cap.
        reached: generation index or time reached.
    """

    def __init__(self, message: str, partial=None, reached=None):
        super().__init__(message)
        self.partial = partial
        self.reached = reached
