"""Exception hierarchy.

The CLI maps these onto exit codes: ConfigError -> 2, SeparationError -> 3,
ConvergenceError -> 4.
"""


class GmusicError(Exception):
    """Base class for all library errors."""


class ConfigError(GmusicError, ValueError):
    """Invalid model, query, scenario file or argument."""


class DomainError(GmusicError, ValueError):
    """A rational function was evaluated at one of its poles."""


class BoundaryError(DomainError):
    """A real point sits on an edge of the limiting support."""


class SeparationError(GmusicError):
    """Noise and signal clusters are not separated (or the spike is below threshold)."""


class ConvergenceError(GmusicError, ArithmeticError):
    """Root finding or quadrature failed to reach its tolerance."""
