"""Exception types shared across the package."""


class QuasisolError(Exception):
    """Base class for errors raised by quasisol."""


class DomainError(QuasisolError, ValueError):
    """An input violates a mathematical precondition (infeasible point,
    invalid exponent, negative radius, ...)."""


class ConfigError(QuasisolError, ValueError):
    """A configuration document or rule specification is invalid."""


class SolveFailure(QuasisolError, RuntimeError):
    """A linear solve did not reach the requested residual tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last relative residual {residual:.3e})")
        self.residual = residual


class InfeasibleError(QuasisolError, RuntimeError):
    """No feasible point could be found (empty constraint intersection or
    bracket search exhausted)."""
