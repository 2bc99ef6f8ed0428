"""Exception types raised across the package.

Validation problems derive from ``ValueError`` and runtime/solver failures
from ``RuntimeError``; the CLI maps the two families to distinct exit codes.
"""


class ConfigurationError(ValueError):
    """Invalid configuration, discretization or time partition."""


class GeometryError(ValueError):
    """Design masks or meshes violate a geometric invariant."""


class DomainError(ValueError):
    """A scalar argument lies outside its admissible range."""


class AlignmentError(ValueError):
    """Traces, data or histories do not share nodes / time partitions."""


class LineageError(ValueError):
    """Two meshes are not related by a single refinement step."""


class DegenerateDirectionError(ArithmeticError):
    """Search direction has zero norm."""


class InstabilityError(RuntimeError):
    """Non-finite values appeared during time stepping."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
