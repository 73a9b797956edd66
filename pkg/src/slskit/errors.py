"""Exception types shared across the toolkit."""


class SlsError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(SlsError):
    """Operands have inconsistent shapes."""


class SingularKkt(SlsError):
    """The (regularized) KKT system could not be factorized or solved to
    tolerance; signals an infeasible or degenerate subproblem."""


class NoConvergence(SlsError):
    """An iterative kernel hit its iteration cap without converging."""


class MaxItersExceeded(SlsError):
    """Iteration budget exhausted.  Carries the last iterate and residuals
    so callers can inspect or restart."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class NotStabilizable(SlsError):
    """No stabilizing solution exists (Riccati solve failed)."""


class NotDetectable(SlsError):
    """Dual Riccati solve failed: (A, C2) is not detectable."""


class Infeasible(SlsError):
    """Constraint set certified (numerically) empty.  Carries the residual
    achieved by the best attempt."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class BadDiagonal(SlsError):
    """Block-triangular inverse requires identity diagonal blocks."""


class SingularPerturbation(SlsError):
    """A diagonal block of I + Delta is singular."""


class DivergentSeries(SlsError):
    """Neumann series for (I + Delta)^-1 diverges in every tracked norm."""


class PremiseViolated(SlsError):
    """A theorem's hypothesis does not hold for the supplied data."""


class IllPosedLoop(SlsError):
    """Static feedback loop matrix is singular (direct-feedthrough cycle)."""


class InvalidConfig(SlsError):
    """Configuration values violate a documented invariant."""


class ParseError(SlsError):
    """Structured-text input is malformed; message carries line context."""


class ValidationError(SlsError):
    """A parsed configuration field has an invalid or unknown value."""
