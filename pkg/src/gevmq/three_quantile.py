"""Three-quantile estimator of GEV parameters and its asymptotic variances.

Three GEV quantiles at percentiles ``q1 < q2 < q3`` determine ``(xi, mu, sigma)``
exactly. With ``LL_j = log(-log q_j)``, ``a1 = LL1 - LL3``, ``a2 = LL2 - LL3`` and
``b = (T3 - T2) / (T3 - T1)`` the shape is the non-zero root of

    h(x) = exp(-x a2) - b exp(-x a1) - 1 + b,

and location and scale then follow from the linear system ``T_j = mu + sigma Q_j``
where ``Q_j = expm1(-xi LL_j) / xi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, EstimationError
from .gev import XI_ZERO, GevParams, _as_params, loglog, quantile, reduced_quantile
from .quantiles import sigma_T

#: |a1 b - a2| below this multiple of a1 means the two roots of h merge at 0.
DEGENERATE_TOL = 1e-12
#: Below this |xi| the gradient W uses the implicit-function form, which has a
#: finite limit at xi = 0; alpha * V is 0/0 there.
W_SMALL_XI = 1e-6
MAX_ITER = 100


@dataclass(frozen=True)
class PercentileTriple:
    q1: float
    q2: float
    q3: float

    def __post_init__(self):
        if not (0.0 < self.q1 < self.q2 < self.q3 < 1.0):
            raise DomainError(f"need 0 < q1 < q2 < q3 < 1, got {self.as_tuple()}")

    @classmethod
    def of(cls, q) -> "PercentileTriple":
        if isinstance(q, PercentileTriple):
            return q
        q1, q2, q3 = (float(v) for v in q)
        return cls(q1, q2, q3)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.q1, self.q2, self.q3)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple())


@dataclass(frozen=True)
class TripleGeometry:
    """Coefficients of the root equation for one triple and one quantile vector."""

    ll: tuple[float, float, float]
    a1: float
    a2: float
    b: float

    @property
    def s(self) -> float:
        """Stationary point of ``h``."""
        return math.log(self.a1 * self.b / self.a2) / (self.a1 - self.a2)

    @classmethod
    def from_quantiles(cls, q, t) -> "TripleGeometry":
        ll = loglog(PercentileTriple.of(q).as_array())
        t1, t2, t3 = (float(v) for v in t)
        return cls(tuple(ll), ll[0] - ll[2], ll[1] - ll[2], (t3 - t2) / (t3 - t1))


def h_residual(x, a1, a2, b):
    """The root function ``h`` itself, unscaled."""
    return np.exp(-x * a2) - b * np.exp(-x * a1) - 1.0 + b


def _scaled_h(x, a1, a2, b, cb):
    """``h`` (for x >= 0) or ``exp(x a1) h`` (for x < 0), with derivative.

    The rescaling keeps every term bounded by one on the negative half-line,
    where the raw exponentials overflow; it does not move the roots. ``cb`` is
    ``1 - b`` computed from the quantile gaps, which keeps its relative
    precision when ``b`` is within rounding of one (very heavy upper tails).
    """
    neg = x < 0
    xp = np.where(neg, 0.0, x)
    xn = np.where(neg, x, 0.0)
    e2, e1 = np.exp(-xp * a2), np.exp(-xp * a1)
    f_pos = -e2 * np.expm1(-xp * (a1 - a2)) + cb * np.expm1(-xp * a1)
    d_pos = -a2 * e2 + b * a1 * e1
    ed, en = np.exp(xn * (a1 - a2)), np.exp(xn * a1)
    f_neg = np.expm1(xn * (a1 - a2)) - cb * np.expm1(xn * a1)
    d_neg = (a1 - a2) * ed - cb * a1 * en
    return np.where(neg, f_neg, f_pos), np.where(neg, d_neg, d_pos)


def solve_h_roots(a1, a2, b, cb=None) -> np.ndarray:
    """Non-zero roots of ``h`` for arrays of coefficients (vectorized).

    The stationary point ``s`` splits the real line into two monotone pieces and
    the non-zero root lies on the side of ``s`` away from the origin. The outer
    end of that piece is expanded geometrically until ``h`` changes sign, then
    Newton steps are taken, falling back to bisection whenever a step leaves the
    current bracket. Returns 0 where ``a1 b`` equals ``a2`` (double root at 0).
    Pass ``cb = (T2 - T1) / (T3 - T1)`` when available; it defaults to ``1 - b``.
    """
    if cb is None:
        cb = 1.0 - np.asarray(b, dtype=float)
    a1, a2, b, cb = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a1, a2, b, cb)))
    a1, a2, b, cb = a1.ravel(), a2.ravel(), b.ravel(), cb.ravel()
    c = a1 * b - a2
    degenerate = np.abs(c) < DEGENERATE_TOL * a1
    a1b = np.where(degenerate, a2 + 1.0, a1 * b)
    s = np.log(a1b / a2) / (a1 - a2)
    s = np.where(degenerate, 0.0, s)
    right = c > 0

    # Outer bracket end: h(outer) < 0 on both branches.
    step = np.maximum(1.0, np.abs(s))
    outer = np.where(right, s + step, s - step)
    for _ in range(200):
        f, _d = _scaled_h(outer, a1, a2, b, cb)
        grow = (f >= 0) & ~degenerate
        if not grow.any():
            break
        step = np.where(grow, 2.0 * step, step)
        outer = np.where(grow, np.where(right, s + step, s - step), outer)
    else:
        raise EstimationError("could not bracket the shape root")

    # Invariant: h > 0 at `inner`, h < 0 at `outer`.
    inner = s.copy()
    x = 0.5 * (inner + outer)
    active = ~degenerate
    for _ in range(MAX_ITER):
        if not active.any():
            break
        f, d = _scaled_h(x, a1, a2, b, cb)
        pos = f > 0
        inner = np.where(active & pos, x, inner)
        outer = np.where(active & ~pos & (f != 0), x, outer)
        lo, hi = np.minimum(inner, outer), np.maximum(inner, outer)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = x - f / d
        ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
        x_new = np.where(ok, newton, 0.5 * (lo + hi))
        done = (f == 0) | (np.abs(x_new - x) <= 1e-14 * np.maximum(1.0, np.abs(x))) | (hi - lo <= 1e-15 * np.maximum(1.0, np.abs(x)))
        x = np.where(active, x_new, x)
        active &= ~done
    # The step-size stop leaves x a few dozen ulps short; one more Newton step
    # (kept inside the bracket) lands on the nearest representable root.
    f, d = _scaled_h(x, a1, a2, b, cb)
    with np.errstate(divide="ignore", invalid="ignore"):
        polished = x - f / d
    lo, hi = np.minimum(inner, outer), np.maximum(inner, outer)
    keep = np.isfinite(polished) & (polished >= lo) & (polished <= hi)
    x = np.where(keep, polished, x)
    # On x < 0 the scaling flattens h and the bracket can close up to ~1e-12
    # away from the root; finish with steps on h itself. They may leave the
    # bracket but are tiny and must reduce |h|.
    for _ in range(2):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            raw = np.expm1(-x * a2) - b * np.expm1(-x * a1)
            step = x - raw / (-a2 * np.exp(-x * a2) + b * a1 * np.exp(-x * a1))
            raw_step = np.expm1(-step * a2) - b * np.expm1(-step * a1)
        keep = ((x < 0) & np.isfinite(raw_step) & (np.abs(raw_step) < np.abs(raw))
                & (np.abs(step - x) <= 1e-8 * np.maximum(1.0, np.abs(x))))
        x = np.where(keep, step, x)
    return np.where(degenerate, 0.0, x)


def _check_increasing(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.shape[-1] != 3:
        raise DomainError("expected a quantile triple")
    return t


def solve_xi(q, t) -> float:
    """Shape parameter implied by three quantiles ``t`` at percentiles ``q``.

    Raises
    ------
    DomainError
        If ``t`` is not strictly increasing.
    """
    t = _check_increasing(t)
    if not (t[0] < t[1] < t[2]):
        raise DomainError(f"quantiles must be strictly increasing, got {tuple(t)}")
    g = TripleGeometry.from_quantiles(q, t)
    cb = (t[1] - t[0]) / (t[2] - t[0])
    return float(solve_h_roots(g.a1, g.a2, g.b, cb)[0])


def q_values(xi: float, ll) -> np.ndarray:
    """``Q_j`` for reduced log-log percentiles (Gumbel limit ``-LL_j`` at xi = 0)."""
    return reduced_quantile(xi, ll)


def dq_dxi(xi: float, ll) -> np.ndarray:
    """Derivative of ``Q_j`` with respect to the shape.

    The closed form ``(1 - (1 + t) e^{-t}) / xi^2`` with ``t = xi LL_j`` cancels
    badly for small ``t``; there the power series in ``t`` is summed instead
    (its leading term is the limit ``LL_j^2 / 2``).
    """
    ll = np.asarray(ll, dtype=float)
    t = xi * ll
    small = np.abs(t) < 0.1
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        closed = -(np.expm1(-t) + t * np.exp(-t)) / (xi * xi)
    # sum_{n>=2} (-1)^n (n-1)/n! t^(n-2)
    series = np.zeros_like(t)
    coef = 0.5
    tp = np.ones_like(t)
    for n in range(2, 16):
        series = series + coef * tp
        tp = tp * t
        coef = -coef * n / ((n + 1) * (n - 1))
    return np.where(small, ll * ll * series, closed)


def estimate_theta(q, t_hat) -> GevParams:
    """Invert three (empirical) quantiles into GEV parameters.

    Raises
    ------
    EstimationError
        If ``t_hat`` is not strictly increasing (possible for small samples
        with tied order statistics).
    """
    q = PercentileTriple.of(q)
    t = _check_increasing(t_hat)
    if not (t[0] < t[1] < t[2]):
        raise EstimationError(f"empirical quantiles not strictly increasing: {tuple(t)}")
    xi = solve_xi(q, t)
    ll = loglog(q.as_array())
    mu, sigma = location_scale(xi, ll, t)
    return GevParams(xi, mu, sigma)


def location_scale(xi: float, ll, t) -> tuple[float, float]:
    """``(mu, sigma)`` from the first two quantiles once the shape is known."""
    qv = q_values(xi, ll)
    t1, t2 = float(t[0]), float(t[1])
    dq = qv[1] - qv[0]
    sigma = (t2 - t1) / dq
    mu = (t1 * qv[1] - qv[0] * t2) / dq
    return float(mu), float(sigma)


def w_rows(xi: float, ll: np.ndarray, t: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """Gradient of the shape map with respect to the quantiles, one row per triple.

    ``ll`` and ``t`` have shape ``(m, 3)``: log-log percentiles and the true
    quantiles of ``G_(xi, mu, sigma)``.
    """
    ll = np.atleast_2d(ll)
    t = np.atleast_2d(t)
    if abs(xi) >= W_SMALL_XI:
        a1 = ll[:, 0] - ll[:, 2]
        a2 = ll[:, 1] - ll[:, 2]
        span = t[:, 2] - t[:, 0]
        b = (t[:, 2] - t[:, 1]) / span
        alpha = np.expm1(-xi * a1) / (-a2 * np.exp(-xi * a2) + b * a1 * np.exp(-xi * a1))
        v = np.stack([t[:, 2] - t[:, 1], t[:, 0] - t[:, 2], t[:, 1] - t[:, 0]], axis=1) / span[:, None] ** 2
        return alpha[:, None] * v
    # Implicit differentiation of (T2-T3)Q1 + (T3-T1)Q2 + (T1-T2)Q3 = 0, which
    # keeps the shape root simple at xi = 0.
    qv = q_values(xi, ll)
    dq = dq_dxi(xi, ll)
    num = np.stack([qv[:, 2] - qv[:, 1], qv[:, 0] - qv[:, 2], qv[:, 1] - qv[:, 0]], axis=1)
    den = (qv[:, 1] - qv[:, 2]) * dq[:, 0] + (qv[:, 2] - qv[:, 0]) * dq[:, 1] + (qv[:, 0] - qv[:, 1]) * dq[:, 2]
    return -num / (sigma * den[:, None])


def grad_W(q, theta) -> np.ndarray:
    """Row vector ``W = d xi_hat / d T`` at the true quantiles of ``G_theta``."""
    p = _as_params(theta)
    qa = PercentileTriple.of(q).as_array()
    t = quantile(p, qa)
    return w_rows(p.xi, loglog(qa)[None, :], t[None, :], p.sigma)[0]


def avar_xi(q, theta) -> float:
    """Asymptotic variance of ``sqrt(N) (xi_hat - xi)`` for one triple."""
    p = _as_params(theta)
    qa = PercentileTriple.of(q).as_array()
    w = grad_W(qa, p)
    return float(w @ sigma_T(p, qa) @ w)


def scale_map(t, qv) -> float:
    """``S(T, Q) = (T2 - T1) / (Q2 - Q1)``."""
    return (t[1] - t[0]) / (qv[1] - qv[0])


def location_map(t, qv) -> float:
    """``L(T, Q) = (T1 Q2 - Q1 T2) / (Q2 - Q1)``."""
    return (t[0] * qv[1] - qv[0] * t[1]) / (qv[1] - qv[0])


def scale_location_gradients(t, qv) -> dict[str, np.ndarray]:
    """Partial gradients of ``S`` and ``L`` with respect to ``T`` and ``Q``."""
    t1, t2 = float(t[0]), float(t[1])
    q1, q2 = float(qv[0]), float(qv[1])
    dq = q2 - q1
    k = (t2 - t1) / dq**2
    return {
        "dT_S": np.array([-1.0, 1.0, 0.0]) / dq,
        "dQ_S": k * np.array([1.0, -1.0, 0.0]),
        "dT_L": np.array([q2, -q1, 0.0]) / dq,
        "dQ_L": k * np.array([-q2, q1, 0.0]),
    }


@dataclass(frozen=True)
class ThreeQuantileAvar:
    """Asymptotic variances of the three-quantile estimator.

    ``cov`` is the full asymptotic covariance in ``(xi, mu, sigma)`` order.
    """

    avar_xi: float
    avar_mu: float
    avar_sigma: float
    cov: Optional[np.ndarray] = None


def avar_sigma_mu(q, theta) -> ThreeQuantileAvar:
    """Delta-method variances of the location and scale estimates.

    The shape error drives the ``Q`` error (``dQ = dQ/dxi * dxi``), which gives
    ``Sigma_Q = avar(xi) dQ dQ^T`` and the cross block ``Cov_{T,Q}`` with entries
    ``(W Sigma_T)_i dQ_j``.
    """
    p = _as_params(theta)
    qa = PercentileTriple.of(q).as_array()
    ll = loglog(qa)
    t = quantile(p, qa)
    st = sigma_T(p, qa)
    w = grad_W(qa, p)
    avx = float(w @ st @ w)
    qv = q_values(p.xi, ll)
    dq = dq_dxi(p.xi, ll)
    sigma_q = avx * np.outer(dq, dq)
    cov_tq = np.outer(w @ st, dq)
    g = scale_location_gradients(t, qv)

    def quad_form(dt, dqv):
        return float(dt @ st @ dt + dqv @ sigma_q @ dqv + 2.0 * dt @ cov_tq @ dqv)

    avs = quad_form(g["dT_S"], g["dQ_S"])
    avm = quad_form(g["dT_L"], g["dQ_L"])
    d = np.vstack([
        w,
        g["dT_L"] + (g["dQ_L"] @ dq) * w,
        g["dT_S"] + (g["dQ_S"] @ dq) * w,
    ])
    cov = d @ st @ d.T
    return ThreeQuantileAvar(avx, avm, avs, 0.5 * (cov + cov.T))
