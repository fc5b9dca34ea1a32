"""Exception hierarchy for gneagg.

Every error derives from :class:`GneAggError` and from the closest builtin, so
code that already catches ``ValueError`` or ``RuntimeError`` keeps working.
"""

from __future__ import annotations

from typing import Any


class GneAggError(Exception):
    """Base class for all gneagg errors."""


class DimensionMismatch(GneAggError, ValueError):
    """A vector or matrix does not have the shape the game requires."""


class InfeasibleInstance(GneAggError, ValueError):
    """A generated game has no strictly feasible point."""


class NotSupported(GneAggError, TypeError):
    """The operation needs structure the game does not expose."""


class InvalidBox(GneAggError, ValueError):
    """A box has a lower bound above its upper bound."""


class InfeasibleSet(GneAggError, ValueError):
    """A constraint set is empty."""


class MaxIterExceeded(GneAggError, RuntimeError):
    """An iterative projection ran out of iterations.

    Attributes:
        best: The best iterate found.
        residual: Its certificate residual.
    """

    def __init__(self, message: str, best: Any = None, residual: float = float("nan")) -> None:
        super().__init__(message)
        self.best = best
        self.residual = residual


class ProjectionFailure(GneAggError, RuntimeError):
    """A projection could not be computed for an agent."""


class InvalidParams(GneAggError, ValueError):
    """Generator parameters are out of range."""


class RangeError(GneAggError, IndexError):
    """An iteration index lies outside the materialized horizon."""


class AssumptionViolated(GneAggError, ValueError):
    """A network or step-size hypothesis fails, so a bound is not guaranteed."""


class PDCheckFailed(GneAggError, ArithmeticError):
    """The preconditioner is not positive definite enough."""


class InvalidGamma(GneAggError, ValueError):
    """A relaxation schedule is outside its admissible range."""


class NonFiniteIterate(GneAggError, ArithmeticError):
    """A solver produced NaN or infinite values.

    Attributes:
        k: Iteration at which the non-finite value appeared.
    """

    def __init__(self, message: str, k: int = -1) -> None:
        super().__init__(message)
        self.k = k


class ScheduleExhausted(GneAggError, RuntimeError):
    """A run outlived its graph schedule with cycling disabled."""


class NoConvergence(GneAggError, RuntimeError):
    """A reference solver missed its tolerance.

    Attributes:
        best: The best (x, lambda) pair found.
        residual: KKT residual at ``best``.
    """

    def __init__(self, message: str, best: Any = None, residual: float = float("nan")) -> None:
        super().__init__(message)
        self.best = best
        self.residual = residual


class NotStrictlyFeasible(GneAggError, ValueError):
    """A point meant to be a Slater point has no strict slack."""


class MissingReference(GneAggError, LookupError):
    """A metric needs a reference solution that was not supplied."""


class InstanceMismatch(GneAggError, ValueError):
    """Compared runs were produced on different game instances."""


class ConfigError(GneAggError, ValueError):
    """An experiment configuration is malformed."""
