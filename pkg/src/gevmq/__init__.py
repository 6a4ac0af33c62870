"""Quantile-based estimation of Generalized Extreme Value parameters."""
from .errors import DomainError, EstimationError, RobustnessError
from .gev import GevParams, SupportInterval, cdf, log_likelihood, logpdf, pdf, quantile, sample, support
from .multi_quantile import (
    LambdaMatrix,
    TripleSet,
    estimate_theta_mq,
    estimate_xi_iterative,
    fit_mq,
    lambda_matrix,
    optimal_weights,
    select_random_triples,
)
from .three_quantile import PercentileTriple, avar_xi, estimate_theta, solve_xi

__version__ = "0.1.0"
