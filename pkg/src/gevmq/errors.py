"""Exception types raised by the estimators."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class EstimationError(RuntimeError):
    """An estimator could not produce a value for the given data."""


class RobustnessError(EstimationError):
    """The triple-set covariance matrix is numerically singular.

    Callers should draw a different set of percentile triples.
    """
