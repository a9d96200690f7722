"""Exception types raised across the toolkit."""


class BifkitError(Exception):
    """Base class for all toolkit errors."""


class EvaluationFailure(BifkitError):
    """A vector field returned non-finite values or could not be evaluated."""


class DimensionError(BifkitError, ValueError):
    pass


class NoConvergence(BifkitError):
    """Newton corrector did not converge."""

    def __init__(self, msg, iterations=0, residual=float("nan")):
        super().__init__(msg)
        self.iterations = iterations
        self.residual = residual


class RankDeficient(BifkitError):
    pass


class NullspaceDimensionError(BifkitError):
    pass


class DomainError(BifkitError, ValueError):
    pass


class PoleError(DomainError):
    pass


class NotAHopf(BifkitError):
    pass


class NoZeroEigenvalue(BifkitError):
    pass


class EigenpairInvalid(BifkitError):
    pass


class BracketLost(BifkitError):
    pass


class SchemaError(BifkitError, ValueError):
    """Invalid run specification."""


class ArchiveError(BifkitError):
    pass
