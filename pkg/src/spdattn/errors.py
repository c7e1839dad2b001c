"""Exception types raised across the package.

Every error subclasses :class:`SpdError`, so callers can catch one type at
the boundary (the command-line driver does exactly that).  Errors that are
really argument problems also subclass ``ValueError``.
"""


class SpdError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SpdError, ValueError):
    """An array argument has the wrong shape or dimensionality."""


class NotSymmetricError(SpdError, ValueError):
    """A matrix expected to be symmetric is not, beyond tolerance."""


class NotPositiveDefiniteError(SpdError, ValueError):
    """A matrix expected to be positive definite has an eigenvalue at or
    below the positivity threshold."""


class SpectralError(SpdError, RuntimeError):
    """The eigenvalue solver failed to converge.

    Attributes
    ----------
    diagnostics : dict
        Condition information about the offending matrix (dimension,
        Frobenius norm, finite-entry check).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class DomainError(SpdError, ValueError):
    """A spectral map was applied to a matrix whose eigenvalues lie
    outside the domain of the scalar function."""


class RangeError(SpdError, ValueError):
    """A spectral map would overflow the floating-point range."""


class WeightError(SpdError, ValueError):
    """A weight vector violates the convexity constraint."""


class ConvergenceError(SpdError, RuntimeError):
    """An iterative routine exhausted its iteration budget.

    Attributes
    ----------
    iterations : int
        Number of iterations performed before giving up.
    residual : float
        Final residual norm.
    """

    def __init__(self, message, iterations=0, residual=float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class RankError(SpdError, ValueError):
    """A matrix that must have full row rank is rank deficient."""


class ContractError(SpdError, ValueError):
    """A caller violated an interface contract (non-scalar loss,
    mismatched label spaces, foreign tape nodes, and the like)."""


class StageError(SpdError, RuntimeError):
    """An error raised inside a named stage of the forward pipeline.

    Wraps the original exception (available as ``__cause__``) and names
    the stage so failures in a deep pipeline are attributable.
    """

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage


class FormatError(SpdError, ValueError):
    """A file does not conform to the expected serialization format."""


class LengthError(SpdError, ValueError):
    """A binary payload has the wrong byte length."""


class ContentError(SpdError, ValueError):
    """A file parsed correctly but its contents are inconsistent."""


class StratificationError(SpdError, ValueError):
    """A class has too few trials to appear in both split parts."""


class ConfigError(SpdError, ValueError):
    """A configuration value is out of range or inconsistent."""


class DivergenceError(SpdError, RuntimeError):
    """Training produced a non-finite loss.

    Attributes
    ----------
    iteration : int
        Iteration index (0-based) at which divergence was detected.
    """

    def __init__(self, message, iteration=-1):
        super().__init__(message)
        self.iteration = iteration
