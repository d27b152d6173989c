"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all kaclayer errors."""


class DomainError(ToolkitError, ValueError):
    """Input outside the mathematical domain of an operation."""


class ConvergenceError(ToolkitError, RuntimeError):
    """An iterative solver exhausted its budget.  For the convex solvers this
    signals a bug or inputs far outside the validated regime, not a
    borderline math condition."""


class NonConvergence(ConvergenceError):
    """Coordinate-descent / sweep iteration hit max_sweeps; carries the
    last residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SizeError(ToolkitError, ValueError):
    """Problem size beyond the exact-computation budget."""


class SandwichViolation(ToolkitError, AssertionError):
    """The unconditional upper bound of the ensemble sandwich failed; one of
    the two modules computing it has a bug."""


class ContractionViolation(ToolkitError, RuntimeError):
    """Contraction coefficient >= 1 or an iterate left the trust box;
    reported, never silently clamped."""


class GeometryError(ToolkitError, ValueError):
    """Region geometry inconsistent (vertical partner leaves the region,
    rectangles malformed, ...)."""


class BoundaryError(ToolkitError, ValueError):
    """Boundary collar not in the state an operation requires."""


class ConstraintError(ToolkitError, ValueError):
    """A profile violates a constraint set (smoothness, mean constraint)."""


class SpecError(ToolkitError, ValueError):
    """A user-supplied kernel density violates the model hypotheses."""
