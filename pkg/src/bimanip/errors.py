"""Exception types shared across the package.

Two failure families matter to callers (and to the CLI exit codes):
inputs that violate a documented precondition, and numerical breakdowns
at runtime (NaN losses, unreachable waypoints, rank collapse).
"""


class ValidationError(ValueError):
    """An input violates a documented precondition or file schema."""


class NumericalError(RuntimeError):
    """A computation broke down numerically (NaN, no convergence, ...)."""
