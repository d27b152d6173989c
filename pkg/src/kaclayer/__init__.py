"""kaclayer: two-layer Kac-coupled Ising toolkit.

Exact pair thermodynamics, the finite-n constrained ensemble, coarse-grained
free-energy functionals and their constrained minimizers, contour geometry on
the rectangle partition, and a seeded Monte Carlo sampler for the chessboard
Hamiltonian.
"""

__version__ = "0.1.0"

from . import canonical, functional, lattice, mc, meanfield, regions  # noqa: F401
from .errors import (  # noqa: F401
    BoundaryError,
    ConstraintError,
    ContractionViolation,
    ConvergenceError,
    DomainError,
    GeometryError,
    NonConvergence,
    SandwichViolation,
    SizeError,
    SpecError,
    ToolkitError,
)
