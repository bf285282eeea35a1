"""Exception hierarchy shared by all modules.

The CLI maps each class to a process exit code, so new error types should
subclass one of these rather than ``Exception`` directly.
"""
from __future__ import annotations


class TelegraphLdpError(Exception):
    """Base class for every error raised by the package."""


class DomainError(TelegraphLdpError, ValueError):
    """An argument lies outside the domain of the operation."""


class NumericError(TelegraphLdpError, ArithmeticError):
    """A numerical routine missed its error target.

    ``estimate`` carries the achieved error estimate when one is available.
    """

    def __init__(self, message: str, estimate: float | None = None):
        super().__init__(message)
        self.estimate = estimate


class SolverError(NumericError):
    """An iterative optimizer failed to converge.

    ``best`` holds the best (feasibility residual, objective) pair seen.
    """

    def __init__(self, message: str, best: tuple[float, float] | None = None):
        super().__init__(message, None if best is None else best[0])
        self.best = best


class DivergenceError(NumericError):
    """An ODE trajectory exceeded the magnitude cap."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class CapacityError(TelegraphLdpError):
    """The request exceeds the supported problem size."""
