"""Exception types shared across the package."""

from __future__ import annotations


class DomainError(ValueError):
    """An argument lies outside the domain where the operation is defined."""


class DegenerateDataError(ValueError):
    """The data do not determine the requested estimate (e.g. zero variance)."""


class SingularMatrixError(ArithmeticError):
    """A matrix is singular or too ill-conditioned to invert reliably.

    Attributes:
        condition: estimated 1-norm condition number (``inf`` when exactly singular)
    """

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition
