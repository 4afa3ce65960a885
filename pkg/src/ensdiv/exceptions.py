"""Exception types raised by ensdiv."""


class EnsdivError(Exception):
    """Base class for all library errors."""


class TruncationError(EnsdivError, ValueError):
    """Rejection sampling against a truncation box cannot make progress."""


class OracleError(EnsdivError, RuntimeError):
    """The ground-truth Monte Carlo integral is unusable."""


class DuplicatePointError(EnsdivError, ValueError):
    """A k-NN radius collapsed to zero because of repeated points."""


class EstimationError(EnsdivError, ValueError):
    """An estimator produced a value that cannot be post-processed."""


class SingularConstraintError(EnsdivError, ValueError):
    """The ensemble constraint Gram matrix is numerically singular."""


class InfeasibleWeightsError(EnsdivError, ValueError):
    """No weight vector satisfies the requested constraints."""
