"""Baseline shape estimators: maximum likelihood, probability-weighted moments
and the Dekkers-Einmahl-de Haan moment estimator.

Each returns a :class:`FitResult`; validity problems are reported through
``valid`` and ``failure_reason`` rather than raised.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.special import gamma

from .errors import DomainError, EstimationError
from .gev import GevParams, logpdf, score
from .multi_quantile import TripleSet, fit_mq, min_sample_size, select_random_triples
from .three_quantile import estimate_theta

#: MLE shape estimates at or below this are outside the range where the MLE
#: is asymptotically normal.
MLE_XI_MIN = -0.5
#: PWM is defined only for shapes below this.
PWM_XI_MAX = 0.5
MLE_MIN_N = 10
GRAD_TOL = 1e-4
#: ``1 + xi z`` below this at some data point counts as sitting on the support edge.
BOUNDARY_TOL = 1e-6


class Estimator(str, enum.Enum):
    MQ = "MQ"
    MLE = "MLE"
    PWM = "PWM"
    DEH = "DEH"


@dataclass(frozen=True)
class FitResult:
    estimator: Estimator
    xi_hat: float
    mu_hat: Optional[float] = None
    sigma_hat: Optional[float] = None
    valid: bool = True
    failure_reason: Optional[str] = None

    @classmethod
    def failure(cls, estimator: Estimator, reason: str, xi_hat: float = math.nan, **kw) -> "FitResult":
        return cls(estimator, xi_hat, valid=False, failure_reason=reason, **kw)

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator.value,
            "xi_hat": self.xi_hat,
            "mu_hat": self.mu_hat,
            "sigma_hat": self.sigma_hat,
            "valid": self.valid,
            "failure_reason": self.failure_reason,
        }


# ---------------------------------------------------------------------------
# Probability-weighted moments

def pwm_betas(data) -> tuple[float, float, float]:
    """Unbiased sample PWMs ``beta_0, beta_1, beta_2`` of the sorted sample."""
    z = np.sort(np.asarray(data, dtype=float))
    n = z.size
    i = np.arange(n, dtype=float)  # i - 1 in one-based terms
    b0 = z.mean()
    b1 = np.dot(i / (n - 1), z) / n
    b2 = np.dot(i * (i - 1) / ((n - 1) * (n - 2)), z) / n
    return float(b0), float(b1), float(b2)


def pwm_ratio(x: float) -> float:
    """``(3^x - 1) / (2^x - 1)``, with its limit ``log 3 / log 2`` at 0."""
    if x == 0.0:
        return math.log(3.0) / math.log(2.0)
    return math.expm1(x * math.log(3.0)) / math.expm1(x * math.log(2.0))


def _pwm_scale_location(xi: float, b0: float, b1: float) -> tuple[float, float]:
    g = gamma(1.0 - xi)
    if xi == 0.0:
        sigma = (2.0 * b1 - b0) / math.log(2.0)
        return b0 - sigma * np.euler_gamma, sigma
    sigma = (2.0 * b1 - b0) * xi / (g * math.expm1(xi * math.log(2.0)))
    return b0 - sigma * (g - 1.0) / xi, sigma


def pwm_fit(data) -> FitResult:
    """Shape from the PWM ratio equation ``(3^x - 1)/(2^x - 1) = (3 b2 - b0)/(2 b1 - b0)``.

    The left side increases from 1 (at ``-inf``) through ``log 3 / log 2`` (at
    0), so the root is unique when it exists. ``mu_hat`` and ``sigma_hat`` are
    filled from the matching PWM identities as a convenience.
    """
    data = np.asarray(data, dtype=float)
    if data.size < 3:
        raise DomainError(f"PWM needs at least 3 observations, got {data.size}")
    b0, b1, b2 = pwm_betas(data)
    den = 2.0 * b1 - b0
    if not den > 0:
        return FitResult.failure(Estimator.PWM, "degenerate sample (zero spread)")
    target = (3.0 * b2 - b0) / den
    hi = PWM_XI_MAX - 1e-9
    if not target < pwm_ratio(hi):
        return FitResult.failure(Estimator.PWM, f"no root below xi={PWM_XI_MAX}; PWM defined only for xi < 0.5")
    if not target > 1.0:
        return FitResult.failure(Estimator.PWM, "ratio <= 1: root at -infinity")
    lo = -20.0
    while pwm_ratio(lo) - target > 0:
        lo *= 2.0
        if lo < -1e4:
            return FitResult.failure(Estimator.PWM, "ratio too close to 1 to bracket the root")
    xi = brentq(lambda x: pwm_ratio(x) - target, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    mu, sigma = _pwm_scale_location(xi, b0, b1)
    return FitResult(Estimator.PWM, float(xi), float(mu), float(sigma))


# ---------------------------------------------------------------------------
# Dekkers-Einmahl-de Haan

def deh_fit(data, k: int, formula: str = "printed") -> FitResult:
    """Moment estimator from the top ``k`` log-excesses over ``Z_(N-k)``.

    ``formula="printed"`` gives ``H1 + 2 H1^2 / H2 - 1``; ``formula="moment"``
    gives the usual ``H1 + 1 - 1 / (2 (1 - H1^2 / H2))``. Both agree for
    ``xi >= 0`` in the limit.

    Raises
    ------
    DomainError
        If ``k`` is not in ``[1, N)`` or ``formula`` is unknown.
    """
    z = np.sort(np.asarray(data, dtype=float))
    n = z.size
    k = int(k)
    if not 1 <= k < n:
        raise DomainError(f"k must satisfy 1 <= k < N={n}, got {k}")
    if formula not in ("printed", "moment"):
        raise DomainError(f"unknown DEH formula {formula!r}")
    threshold = z[n - k - 1]
    if not threshold > 0:
        return FitResult.failure(Estimator.DEH, f"threshold order statistic {threshold:.6g} is not positive")
    ex = np.log(z[n - k:]) - math.log(threshold)
    h1 = float(np.mean(ex))
    h2 = float(np.mean(ex * ex))
    if h2 == 0.0:
        return FitResult.failure(Estimator.DEH, "constant tail: H2 = 0")
    if formula == "printed":
        xi = h1 + 2.0 * h1 * h1 / h2 - 1.0
    else:
        xi = h1 + 1.0 - 0.5 / (1.0 - h1 * h1 / h2)
    if not math.isfinite(xi):
        return FitResult.failure(Estimator.DEH, "non-finite estimate")
    return FitResult(Estimator.DEH, xi)


# ---------------------------------------------------------------------------
# Maximum likelihood

_START_SET: Optional[TripleSet] = None


def _start_triples() -> TripleSet:
    # A fixed small set, so MLE starting points never depend on caller RNG state.
    global _START_SET
    if _START_SET is None:
        _START_SET = select_random_triples(10, np.random.default_rng(20240611))
    return _START_SET


def _neg_loglik(v, data) -> float:
    xi, mu, log_sigma = v
    if not (math.isfinite(xi) and math.isfinite(mu) and abs(log_sigma) < 700):
        return math.inf
    val = -float(np.sum(logpdf(GevParams(xi, mu, math.exp(log_sigma)), data)))
    return val if math.isfinite(val) else math.inf


def _starts(data) -> list[np.ndarray]:
    out = []
    pwm = pwm_fit(data)
    if pwm.valid and pwm.sigma_hat > 0:
        out.append(np.array([pwm.xi_hat, pwm.mu_hat, math.log(pwm.sigma_hat)]))
    try:
        M = _start_triples()
        if data.size >= min_sample_size(M):
            p = fit_mq(M, data).params
        else:
            p = estimate_theta((0.1, 0.5, 0.9), np.quantile(data, [0.1, 0.5, 0.9]))
        out.append(np.array([p.xi, p.mu, math.log(p.sigma)]))
    except (EstimationError, DomainError):
        pass
    sd = float(np.std(data))
    if sd > 0:
        sigma = sd * math.sqrt(6.0) / math.pi
        out.append(np.array([0.0, float(np.mean(data)) - np.euler_gamma * sigma, math.log(sigma)]))
    return out


def _grad_v(v, data) -> np.ndarray:
    """Gradient of the negative log-likelihood in ``(xi, mu, log sigma)``."""
    sigma = math.exp(v[2])
    g = score(GevParams(v[0], v[1], sigma), data)
    return -np.array([g[0], g[1], sigma * g[2]])


def _safe_gnorm(v, data) -> float:
    try:
        return float(np.linalg.norm(_grad_v(v, data)))
    except DomainError:
        return math.inf


def _newton_polish(f, v, data, steps: int = 30) -> np.ndarray:
    """Damped Newton steps: analytic gradient, finite-difference Hessian."""
    for _ in range(steps):
        try:
            g = _grad_v(v, data)
        except DomainError:
            break
        if np.linalg.norm(g) < 0.01 * GRAD_TOL:
            break
        h = 1e-6 * np.maximum(1.0, np.abs(v))
        hm = np.empty((3, 3))
        try:
            for i in range(3):
                e = np.zeros(3)
                e[i] = h[i]
                hm[:, i] = (_grad_v(v + e, data) - _grad_v(v - e, data)) / (2 * h[i])
        except DomainError:
            break
        hm = 0.5 * (hm + hm.T)
        try:
            step = np.linalg.solve(hm, g)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)) or step @ g <= 0:
            break
        f0 = f(v)
        gn = np.linalg.norm(g)
        # Near the optimum f changes below its rounding level, so a shrinking
        # gradient also counts as progress.
        slack = 1e-12 * max(1.0, abs(f0))
        t = 1.0
        while t > 1e-8:
            cand = v - t * step
            fc = f(cand)
            if fc < f0 - slack or (fc <= f0 + slack and _safe_gnorm(cand, data) < gn):
                break
            t *= 0.5
        if t <= 1e-8:
            break
        v = cand
    return v


def mle_fit(data, *, max_restarts: int = 3) -> FitResult:
    """Maximum-likelihood fit of ``(xi, mu, sigma)``.

    Nelder-Mead on ``(xi, mu, log sigma)`` from up to three starting points
    (PWM, multi-quantile, Gumbel moment match), with the negative
    log-likelihood set to ``+inf`` outside the support constraint. The best
    simplex optimum is polished by Newton steps on the analytic score.

    The result is marked invalid when ``xi_hat <= -0.5``, when the optimum sits
    on the support boundary, or when the final gradient norm exceeds 1e-4.
    """
    data = np.asarray(data, dtype=float)
    if data.size < MLE_MIN_N:
        raise DomainError(f"MLE needs at least {MLE_MIN_N} observations, got {data.size}")
    f = lambda v: _neg_loglik(v, data)  # noqa: E731
    best = None
    for v0 in _starts(data)[:max_restarts]:
        if not math.isfinite(f(v0)):
            continue
        res = minimize(f, v0, method="Nelder-Mead",
                       options={"xatol": 1e-9, "fatol": 1e-10, "maxiter": 4000, "maxfev": 8000})
        if math.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        return FitResult.failure(Estimator.MLE, "no feasible starting point")
    v = best.x
    xi, mu, sigma = float(v[0]), float(v[1]), math.exp(v[2])
    edge = float(np.min(1.0 + xi * (data - mu) / sigma))
    if xi <= -1.0 or edge < BOUNDARY_TOL:
        return FitResult.failure(Estimator.MLE, "optimum on the support boundary (likelihood unbounded)",
                                 xi, mu_hat=mu, sigma_hat=sigma)
    v = _newton_polish(f, v, data)
    xi, mu, sigma = float(v[0]), float(v[1]), math.exp(v[2])
    if xi <= MLE_XI_MIN:
        return FitResult.failure(Estimator.MLE, "xi_hat <= -0.5: outside asymptotic-normality range",
                                 xi, mu_hat=mu, sigma_hat=sigma)
    gnorm = loglik_grad_norm(data, GevParams(xi, mu, sigma))
    if not gnorm < GRAD_TOL:
        return FitResult.failure(Estimator.MLE, f"not converged (gradient norm {gnorm:.2e})",
                                 xi, mu_hat=mu, sigma_hat=sigma)
    return FitResult(Estimator.MLE, xi, mu, sigma)


def loglik_grad_norm(data, theta: GevParams) -> float:
    """Norm of the log-likelihood gradient in ``(xi, mu, sigma)``."""
    try:
        return float(np.linalg.norm(score(theta, data)))
    except DomainError:
        return math.inf
