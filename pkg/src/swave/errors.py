"""Exception types shared by the solvers, experiments and CLI."""


class PreconditionError(ValueError):
    """Input data violates a stated precondition (maps to CLI status 3)."""


class CFLViolation(PreconditionError):
    """Time step too large for the explicit wave stepping."""


class NumericalFailure(RuntimeError):
    """A solve or factorization failed, or an internal consistency check tripped."""
