"""Empirical quantiles and asymptotic covariances of GEV sample quantiles."""
from __future__ import annotations

import numpy as np

from .errors import DomainError
from .gev import _as_params


def _check_percentiles(q, *, distinct: bool = True) -> np.ndarray:
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if q.ndim != 1:
        raise DomainError("percentiles must form a vector")
    if np.any(~((q > 0) & (q < 1))):
        raise DomainError("percentiles must lie strictly between 0 and 1")
    if distinct and np.unique(q).size != q.size:
        raise DomainError("percentiles must be pairwise distinct")
    return q


def quantiles_from_sorted(z: np.ndarray, q) -> np.ndarray:
    """Linearly interpolated order-statistic quantiles of an already sorted sample.

    With ``h = (n - 1) q`` the value is ``z[floor(h)] + frac(h) * (z[floor(h)+1] - z[floor(h)])``
    (zero-based), which is numpy's default ``linear`` rule.
    """
    n = z.shape[0]
    if n < 2:
        raise DomainError(f"empirical quantiles need at least 2 observations, got {n}")
    q = np.asarray(q, dtype=float)
    h = (n - 1) * q
    lo = np.floor(h).astype(np.intp)
    lo = np.clip(lo, 0, n - 2)
    frac = h - lo
    return z[lo] + frac * (z[lo + 1] - z[lo])


def empirical_quantile(data, q):
    """Empirical ``q``-quantile(s) of ``data`` (``q`` scalar or vector)."""
    z = np.sort(np.asarray(data, dtype=float))
    qa = _check_percentiles(q, distinct=False)
    out = quantiles_from_sorted(z, qa)
    return float(out[0]) if np.ndim(q) == 0 else out


def cross_cov_K(theta, qs, qt) -> np.ndarray:
    """Asymptotic cross-covariance block of two vectors of empirical quantiles.

    Entry ``(i, j)`` is the limit of ``N Cov(T_hat(qs_i), T_hat(qt_j))`` for a
    sample from ``G_theta``: ``sigma^2 (min(qs_i, qt_j) - qs_i qt_j)`` divided by
    ``qs_i qt_j (log qs_i log qt_j)^(1 + xi)``.
    """
    p = _as_params(theta)
    a = _check_percentiles(qs, distinct=False)[:, None]
    b = _check_percentiles(qt, distinct=False)[None, :]
    # log a * log b > 0, so the power is defined for every real xi.
    denom = a * b * np.exp((1.0 + p.xi) * np.log(np.log(a) * np.log(b)))
    return p.sigma**2 * (np.minimum(a, b) - a * b) / denom


def sigma_T(theta, q) -> np.ndarray:
    """Asymptotic covariance of ``sqrt(N) (T_hat(q) - T(q))`` for distinct percentiles."""
    qa = _check_percentiles(q)
    k = cross_cov_K(theta, qa, qa)
    return 0.5 * (k + k.T)


__all__ = [
    "cross_cov_K",
    "empirical_quantile",
    "quantiles_from_sorted",
    "sigma_T",
]
