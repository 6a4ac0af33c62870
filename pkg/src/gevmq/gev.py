"""Generalized Extreme Value distribution primitives.

The shape convention is the one where ``xi > 0`` gives a heavy (Frechet)
upper tail, i.e. the quantile function is

    T(q) = mu + sigma * (exp(-xi * log(-log q)) - 1) / xi.

All functions accept scalars or numpy arrays for the evaluation point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

#: Below this magnitude the shape is treated as exactly zero (Gumbel branch).
XI_ZERO = 1e-9


@dataclass(frozen=True)
class GevParams:
    """Parameter triple ``(xi, mu, sigma)`` of a GEV distribution."""

    xi: float
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.xi) and math.isfinite(self.mu)):
            raise DomainError(f"xi and mu must be finite, got xi={self.xi}, mu={self.mu}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise DomainError(f"sigma must be positive and finite, got {self.sigma}")

    def standard(self) -> "GevParams":
        """Same shape with location 0 and scale 1."""
        return GevParams(self.xi, 0.0, 1.0)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.xi, self.mu, self.sigma)


@dataclass(frozen=True)
class SupportInterval:
    lo: float
    hi: float

    def __contains__(self, y) -> bool:
        return self.lo < y < self.hi


def _as_params(theta) -> GevParams:
    if isinstance(theta, GevParams):
        return theta
    return GevParams(*theta)


def support(theta) -> SupportInterval:
    """Open support interval of ``G_theta``."""
    xi, mu, sigma = _as_params(theta).as_tuple()
    if abs(xi) < XI_ZERO:
        return SupportInterval(-math.inf, math.inf)
    edge = mu - sigma / xi
    if xi > 0:
        return SupportInterval(edge, math.inf)
    return SupportInterval(-math.inf, edge)


def loglog(q):
    """``log(-log q)``, the reduced Gumbel variate of a percentile."""
    return np.log(-np.log(q))


def reduced_quantile(xi: float, ll):
    """Quantile of ``G_(xi,0,1)`` written in terms of ``ll = log(-log q)``.

    Uses ``expm1`` so that the expression stays accurate for small ``xi``.
    """
    ll = np.asarray(ll, dtype=float)
    if abs(xi) < XI_ZERO:
        return -ll
    return np.expm1(-xi * ll) / xi


def quantile(theta, q):
    """Quantile function of ``G_theta``.

    Raises
    ------
    DomainError
        If any ``q`` lies outside the open interval (0, 1).
    """
    p = _as_params(theta)
    qa = np.asarray(q, dtype=float)
    if np.any(~((qa > 0) & (qa < 1))):
        raise DomainError("percentiles must lie strictly between 0 and 1")
    out = p.mu + p.sigma * reduced_quantile(p.xi, loglog(qa))
    return out if out.ndim else float(out)


def _reduced_t(xi: float, z):
    """Return ``log(1 + xi z)`` where defined, with a mask of valid points."""
    with np.errstate(invalid="ignore", divide="ignore"):
        arg = xi * z
        ok = arg > -1.0
        logt = np.where(ok, np.log1p(np.where(ok, arg, 0.0)), -np.inf)
    return logt, ok


def cdf(theta, y):
    """Cumulative distribution function of ``G_theta``."""
    p = _as_params(theta)
    z = (np.asarray(y, dtype=float) - p.mu) / p.sigma
    if abs(p.xi) < XI_ZERO:
        with np.errstate(over="ignore"):
            out = np.exp(-np.exp(-z))
    else:
        logt, ok = _reduced_t(p.xi, z)
        with np.errstate(over="ignore", invalid="ignore"):
            inner = np.exp(-np.where(ok, logt, 0.0) / p.xi)
            out = np.where(ok, np.exp(-inner), 0.0 if p.xi > 0 else 1.0)
    return out if np.ndim(out) else float(out)


def logpdf(theta, y):
    """Log-density of ``G_theta``; ``-inf`` outside the support."""
    p = _as_params(theta)
    z = (np.asarray(y, dtype=float) - p.mu) / p.sigma
    if abs(p.xi) < XI_ZERO:
        with np.errstate(over="ignore"):
            out = -math.log(p.sigma) - z - np.exp(-z)
    else:
        logt, ok = _reduced_t(p.xi, z)
        lt = np.where(ok, logt, 0.0)
        with np.errstate(over="ignore"):
            val = -math.log(p.sigma) - (1.0 + 1.0 / p.xi) * lt - np.exp(-lt / p.xi)
        out = np.where(ok, val, -np.inf)
    return out if np.ndim(out) else float(out)


def pdf(theta, y):
    """Density of ``G_theta``; zero outside the support."""
    out = np.exp(logpdf(theta, y))
    return out if np.ndim(out) else float(out)


def log_likelihood(theta, data) -> float:
    """Sum of log-densities; ``-inf`` if any point leaves the support."""
    data = np.asarray(data, dtype=float)
    if data.size == 0:
        raise DomainError("log-likelihood needs at least one observation")
    return float(np.sum(logpdf(theta, data)))


def _log1p_excess(u):
    """``(log1p(u) - u / (1 + u)) / u^2``, summed as a series for small ``u``."""
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < 0.1
    with np.errstate(divide="ignore", invalid="ignore"):
        closed = (np.log1p(u) - u / (1.0 + u)) / (u * u)
    series = np.zeros_like(u)
    us = np.where(small, u, 0.0)
    up = np.ones_like(u)
    for n in range(2, 18):
        series = series + (-1) ** n * (n - 1) / n * up
        up = up * us
    return np.where(small, series, closed)


def score(theta, data) -> np.ndarray:
    """Gradient of the log-likelihood in ``(xi, mu, sigma)``.

    Uses the analytic derivatives of the log-density; every point must lie
    inside the support.
    """
    p = _as_params(theta)
    y = np.asarray(data, dtype=float)
    z = (y - p.mu) / p.sigma
    if abs(p.xi) < XI_ZERO:
        ez = np.exp(-z)
        d_mu = (1.0 - ez) / p.sigma
        d_sigma = (-1.0 + z - z * ez) / p.sigma
        d_xi = z * z / 2.0 * (1.0 - ez) - z
        return np.array([d_xi.sum(), d_mu.sum(), d_sigma.sum()])
    u = p.xi * z
    if np.any(u <= -1.0):
        raise DomainError("score is undefined outside the support")
    t = 1.0 + u
    lt = np.log1p(u)
    tp = np.exp(-lt / p.xi)  # t^(-1/xi)
    d_mu = ((1.0 + p.xi) / t - tp / t) / p.sigma
    d_sigma = (-1.0 + (1.0 + p.xi) * z / t - z * tp / t) / p.sigma
    # log(t)/xi^2 - z/(xi t) = z^2 (log1p(u) - u/(1+u)) / u^2
    d_xi = (1.0 - tp) * z * z * _log1p_excess(u) - z / t
    return np.array([d_xi.sum(), d_mu.sum(), d_sigma.sum()])


def uniform_open(rng, n: int) -> np.ndarray:
    """``n`` uniform draws on the open interval (0, 1)."""
    # Generator.random draws from [0, 1); only an exact zero needs moving.
    u = rng.random(n)
    return np.where(u == 0.0, 2.0**-54, u)


def sample(theta, n: int, rng) -> np.ndarray:
    """Draw ``n`` i.i.d. observations by inverse-transform sampling.

    ``rng`` is a :class:`numpy.random.Generator` (anything with ``random(n)``).
    """
    if n < 1:
        raise DomainError(f"sample size must be at least 1, got {n}")
    return np.atleast_1d(quantile(theta, uniform_open(rng, int(n))))
