"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the requested operation."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature failed to reach the requested tolerance.

    ``achieved`` holds the error estimate at the point of failure.
    """

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved error estimate {achieved:.3g})")
        self.achieved = achieved


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss.

    ``term`` names the loss component that diverged.
    """

    def __init__(self, term: str, step: int | None = None):
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite loss term '{term}'{where}")
        self.term = term
        self.step = step


class ConfigError(ValueError):
    """A configuration document is malformed or has unknown fields."""
