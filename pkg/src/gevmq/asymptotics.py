"""Theoretical asymptotic variances of the shape estimators.

Fisher information and the Cramer-Rao bound, the asymptotic variance of the
PWM shape estimator (a double integral), the DEH asymptotic variance, the
search for the variance-minimizing percentile triple, and theoretical
standard-error rows at a nominal sample size.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize
from scipy.special import digamma, gamma, roots_legendre

from .errors import DomainError
from .gev import loglog, reduced_quantile
from .multi_quantile import robust_random_triples, tau2_opt
from .three_quantile import PercentileTriple, w_rows

#: Fisher information is evaluated in closed form only for |xi| above this.
FISHER_XI_MIN = 1e-3
#: Nodes used to bridge the Cramer-Rao bound across xi = 0.
CRB_BRIDGE = (-0.04, -0.02, 0.02, 0.04)
GRID_STEP = 0.01
GRID_LO, GRID_HI = 0.005, 0.995
FISHER_ORDER = ("xi", "mu", "sigma")


@dataclass(frozen=True, eq=False)
class FisherMatrix:
    """Per-observation Fisher information of ``G_(xi, 0, 1)``.

    Rows and columns are ordered ``(xi, mu, sigma)``.
    """

    matrix: np.ndarray
    xi_at: float
    order: tuple[str, str, str] = FISHER_ORDER

    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.matrix)


def _check_fisher_domain(xi: float) -> None:
    if not xi > -0.5:
        raise DomainError(f"CRB undefined for xi <= -0.5 (got {xi})")
    if abs(xi) <= FISHER_XI_MIN:
        raise DomainError(
            f"closed-form Fisher information is singular near xi = 0 (|xi| <= {FISHER_XI_MIN}); "
            "use crb_xi_bridged for the Gumbel limit"
        )


def fisher_info(xi: float) -> FisherMatrix:
    """Closed-form Fisher information per observation at ``(xi, 0, 1)``.

    With ``p = (1+xi)^2 Gamma(1+2xi)``, ``r = Gamma(2+xi)`` and
    ``fq = Gamma(2+xi) (psi(1+xi) + (1+xi)/xi)``.

    Raises
    ------
    DomainError
        If ``xi <= -0.5`` (the information is infinite) or ``|xi| <= 1e-3``.
    """
    xi = float(xi)
    _check_fisher_domain(xi)
    g = np.euler_gamma
    p = (1.0 + xi) ** 2 * gamma(1.0 + 2.0 * xi)
    r = gamma(2.0 + xi)
    fq = r * (digamma(1.0 + xi) + (1.0 + xi) / xi)
    i_xx = (math.pi**2 / 6.0 + (1.0 - g + 1.0 / xi) ** 2 - 2.0 * fq / xi + p / xi**2) / xi**2
    i_xm = -(fq - p / xi) / xi
    i_xs = -(1.0 - g - fq + (1.0 - r + p) / xi) / xi**2
    i_mm = p
    i_ms = -(p - r) / xi
    i_ss = (1.0 - 2.0 * r + p) / xi**2
    j = np.array([[i_xx, i_xm, i_xs], [i_xm, i_mm, i_ms], [i_xs, i_ms, i_ss]])
    return FisherMatrix(j, xi)


def crb_xi(xi: float) -> float:
    """Cramer-Rao bound on the asymptotic variance of shape estimates."""
    return float(fisher_info(xi).inverse()[0, 0])


def crb_xi_bridged(xi: float) -> float:
    """:func:`crb_xi`, continued across ``|xi| <= 1e-3`` by a cubic through four nearby nodes."""
    if abs(xi) > FISHER_XI_MIN:
        return crb_xi(xi)
    nodes = np.array(CRB_BRIDGE)
    return float(CubicSpline(nodes, [crb_xi(v) for v in nodes])(xi))


# ---------------------------------------------------------------------------
# PWM

def _gl_panels(a: float, b: float, n: int, panels: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(n)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


def pwm_moment_cov(xi: float, n: int = 20, panels: int = 10) -> np.ndarray:
    """Asymptotic covariance of the scaled PWM statistics ``X_0, X_1, X_2``.

    ``Cov(X_r, X_l) = (r+1)(l+1) [I(r,l) + I(l,r)]`` where, after ``s = e^{-x}``,
    ``u = e^{-y}`` and splitting the kernel ``min(s,u) - su`` on ``x < y``,

        I(a, b) = int_0^inf e^{-(b+1) y} y^{-1-xi}
                  int_0^y e^{-a x} x^{-1-xi} (1 - e^{-x}) dx dy.

    The outer integral runs over ``log y`` and the inner one over
    ``log(x / y)``, both with composite Gauss-Legendre rules, which resolves
    the algebraic endpoint behaviour.
    """
    zo, wo = _gl_panels(math.log(1e-30), math.log(80.0), n, 3 * panels)
    y = np.exp(zo)
    t, wt = _gl_panels(-80.0, 0.0, n, 2 * panels)
    x = y[:, None] * np.exp(t)[None, :]
    base_in = x ** (-xi) * (-np.expm1(-x))  # x^{-1-xi} (1 - e^{-x}) dx/dt
    inner = [(np.exp(-a * x) * base_in) @ wt for a in range(3)]
    outer = y ** (-xi) * wo  # y^{-1-xi} dy/dz
    c = np.empty((3, 3))
    for r in range(3):
        for l in range(3):
            i_rl = np.sum(np.exp(-(l + 1) * y) * inner[r] * outer)
            i_lr = np.sum(np.exp(-(r + 1) * y) * inner[l] * outer)
            c[r, l] = (r + 1) * (l + 1) * (i_rl + i_lr)
    return 0.5 * (c + c.T)


def _coef(xi: float, c: float) -> float:
    """``xi / (c^xi - 1)``, limit ``1 / log c`` at 0."""
    lc = math.log(c)
    if abs(xi) < 1e-6:
        return (1.0 - xi * lc / 2.0) / lc
    return xi / math.expm1(xi * lc)


def _pwm_u(xi: float) -> float:
    l2, l3 = math.log(2.0), math.log(3.0)
    if abs(xi) < 1e-6:
        d = (l3 - l2) / 2.0 + xi * (l3 * l3 - l2 * l2) / 12.0
    else:
        d = l3 / -math.expm1(-xi * l3) - l2 / -math.expm1(-xi * l2)
    return 1.0 / (gamma(1.0 - xi) * d)


def pwm_avar(xi: float, n: int = 20, panels: int = 10) -> float:
    """Asymptotic variance of ``sqrt(N) (xi_hat_PWM - xi)``.

    Raises
    ------
    DomainError
        If ``xi >= 0.5``.
    """
    xi = float(xi)
    if not xi < 0.5:
        raise DomainError(f"PWM asymptotic variance requires xi < 0.5, got {xi}")
    cov = pwm_moment_cov(xi, n, panels)
    c3, c2 = _coef(xi, 3.0), _coef(xi, 2.0)
    c = np.array([c2 - c3, -c2, c3])
    u = _pwm_u(xi)
    return float(u * u * (c @ cov @ c))


def deh_avar(xi: float) -> float:
    """Asymptotic variance of ``sqrt(k) (xi_hat_DEH - xi)``."""
    xi = float(xi)
    if xi >= 0:
        return 1.0 + xi * xi
    a = 1.0 - 2.0 * xi
    b = 1.0 - 3.0 * xi
    return (1.0 - xi) ** 2 * a * (4.0 - 8.0 * a / b + (5.0 - 11.0 * xi) * a / (b * (1.0 - 4.0 * xi)))


# ---------------------------------------------------------------------------
# Optimal triplet

def avar_xi_many(xi: float, qs) -> np.ndarray:
    """:func:`three_quantile.avar_xi` at ``(xi, 0, 1)`` for an ``(n, 3)`` array of triples."""
    qs = np.atleast_2d(np.asarray(qs, dtype=float))
    ll = loglog(qs)
    w = w_rows(xi, ll, reduced_quantile(xi, ll))
    a = qs[:, :, None]
    b = qs[:, None, :]
    k = (np.minimum(a, b) - a * b) / (a * b * np.exp((1.0 + xi) * np.log(np.log(a) * np.log(b))))
    return np.einsum("ni,nij,nj->n", w, k, w)


@dataclass(frozen=True)
class OptimalTriplet:
    q: PercentileTriple
    avar_star: float
    crb: Optional[float] = None
    efficiency: Optional[float] = None
    grid_best: float = math.nan


def _grid_triples(step: float, lo: float, hi: float) -> np.ndarray:
    """All strictly increasing triples from the grid ``lo, lo + step, ..., hi``."""
    g = lo + step * np.arange(int(round((hi - lo) / step)) + 1)
    i, j = np.triu_indices(g.size, 1)
    rows = [np.column_stack([i[j < c], j[j < c], np.full(np.count_nonzero(j < c), c)]) for c in range(2, g.size)]
    return g[np.concatenate(rows)]


def optimal_triplet(xi: float, step: float = GRID_STEP, lo: float = GRID_LO, hi: float = GRID_HI) -> OptimalTriplet:
    """Triple minimizing the three-quantile shape variance at ``xi``.

    A full grid over ``lo <= q1 < q2 < q3 <= hi`` seeds a Nelder-Mead
    refinement confined to the same box. ``crb`` and ``efficiency`` are set
    when the Cramer-Rao bound exists.
    """
    xi = float(xi)
    if not -5.0 <= xi <= 5.0:
        raise DomainError(f"xi must lie in [-5, 5], got {xi}")
    grid = _grid_triples(step, lo, hi)
    vals = avar_xi_many(xi, grid)
    best = int(np.nanargmin(vals))

    def f(q):
        if not (lo <= q[0] < q[1] < q[2] <= hi):
            return math.inf
        return float(avar_xi_many(xi, q[None, :])[0])

    res = minimize(f, grid[best], method="Nelder-Mead",
                   options={"xatol": 1e-9, "fatol": 1e-14, "maxiter": 5000, "maxfev": 10000})
    q, v = (res.x, float(res.fun)) if res.fun <= vals[best] else (grid[best], float(vals[best]))
    crb = eff = None
    if xi > -0.5:
        crb = crb_xi_bridged(xi)
        eff = crb / v
    return OptimalTriplet(PercentileTriple.of(q), v, crb, eff, float(vals[best]))


# ---------------------------------------------------------------------------
# Theoretical standard errors

@dataclass(frozen=True)
class Table2Row:
    xi: float
    n: int
    mq: float
    mle: Optional[float]
    pwm: Optional[float]


def table2_row(xi: float, n: int, m: int, rng) -> Table2Row:
    """Asymptotic standard errors ``sqrt(avar / n)`` of MQ, MLE (CRB) and PWM.

    The MQ entry uses a robust random set of ``m`` triples on ``{j / (m+2)}``;
    MLE is absent for ``xi <= -0.5`` and PWM for ``xi >= 0.5``.
    """
    if n < 1:
        raise DomainError(f"n must be positive, got {n}")
    mq = math.sqrt(tau2_opt(robust_random_triples(m, xi, rng), xi) / n)
    mle = math.sqrt(crb_xi_bridged(xi) / n) if xi > -0.5 else None
    pwm = math.sqrt(pwm_avar(xi) / n) if xi < 0.5 else None
    return Table2Row(float(xi), int(n), mq, mle, pwm)
