"""Exception types shared across the solver."""


class NumericalError(RuntimeError):
    """Raised when a numerical procedure fails (non-convergence, blow-up)."""


class ConvergenceError(NumericalError):
    """Iterative solve exceeded its iteration cap.

    Carries the final relative residual in ``residual``.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DiagnosticError(NumericalError):
    """A diagnostic solve lost definiteness (e.g. non-positive fluid depth)."""


class BlowUpError(NumericalError):
    """NaN/Inf detected in the prognostic state during time stepping."""

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time
