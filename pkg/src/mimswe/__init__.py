"""Mixed mimetic spectral element solver for the rotating shallow water equations.

The discretization keeps mass, total vorticity, energy and potential
enstrophy conserved at the algebraic level (the latter two up to time
truncation, and enstrophy only under exact quadrature), on doubly periodic
rectangular meshes.
"""

from .errors import BlowUpError, ConvergenceError, DiagnosticError, NumericalError

__all__ = [
    "BlowUpError",
    "ConvergenceError",
    "DiagnosticError",
    "NumericalError",
]

__version__ = "0.1.0"
