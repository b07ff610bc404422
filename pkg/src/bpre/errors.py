"""Exception and warning types shared across the package."""

from __future__ import annotations


class BpreError(Exception):
    """Base class for all package errors."""


class DomainError(BpreError, ValueError):
    """An argument is outside the domain an operation is defined on."""


class NonintegrableTail(BpreError):
    """Tail exponent beta <= 2: tilted variance does not exist."""


class NotStronglyTilted(BpreError):
    """mgf'(rho) >= 0: the tilted walk does not drift to -infinity."""


class NotSubcritical(BpreError):
    """E[X] >= 0: the annealed walk does not drift to -infinity."""


class QuadratureMismatch(BpreError):
    """Closed form and adaptive quadrature disagree beyond tolerance."""


class NotGeometric(BpreError):
    """Closed form requested for a path with some theta != 1."""


class CapExceeded(BpreError):
    """Particle population exceeded the configured cap.

    Signals the caller to fall back to generating-function evaluation.
    """

    def __init__(self, step: int, population: int, cap: int):
        self.step = step
        self.population = population
        self.cap = cap
        super().__init__(
            f"population {population} exceeded cap {cap} at step {step}"
        )


class EmptyPath(BpreError, ValueError):
    """Operation requires at least one environment step."""


class DegenerateSample(BpreError):
    """Effective sample size after weighting is too small to report."""


class ParseError(BpreError):
    """Config text is not valid TOML or has malformed structure."""


class ValidationError(BpreError):
    """Config parsed but its values fail model or range validation."""


class InfeasibleNaiveWarning(UserWarning):
    """Naive estimation at this depth will be dominated by noise."""


class NonsummableWarning(UserWarning):
    """Series terms stopped decreasing; partial sums look divergent."""
