"""Multi-quantile estimator of the GEV shape.

A set of ``m`` percentile triples yields ``m`` three-quantile shape estimates
``eta``. Their joint asymptotic covariance ``Lambda`` (``m x m``) gives the
minimum-variance affine combination ``x = <w, eta>`` with ``sum(w) = 1``:

    w_opt = Lambda^+ z / (z^T Lambda^+ z),    tau2_opt = 1 / (z^T Lambda^+ z),

where ``z`` is the all-ones vector.

Every three-quantile shape estimate is invariant under affine maps of the data,
so its gradient row is the unique (up to scale) vector on its three
percentiles orthogonal to both the constant vector and the quantile vector.
The rows span at most ``k - 2`` dimensions for ``k`` distinct percentiles, and
fewer when some triples share only one percentile with the rest. Random sets of
``m`` triples on ``m + 1`` equidistant percentiles are therefore always
rank-deficient. The deficiency depends only on which percentiles the triples
share, not on the shape, so the structural rank is computed once per set.
``z`` lies in the range of ``Lambda`` (every gradient row has unit inner
product with ``dT/dxi``), hence the pseudo-inverse restricted to that rank
gives the optimal variance. Robustness is judged on the retained spectrum of
the diagonally scaled matrix, so that a wide spread of per-triple variances is
not mistaken for near-singularity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import DomainError, EstimationError, RobustnessError
from .gev import GevParams, loglog, quantile, reduced_quantile
from .quantiles import quantiles_from_sorted, sigma_T
from .three_quantile import solve_h_roots, w_rows

#: Smallest acceptable ratio of the smallest retained eigenvalue of the
#: diagonally scaled Lambda to its largest one.
RCOND_MIN = 1e-10
#: Relative singular-value cut for the structural rank (observed gap: 1e-3 vs 1e-16).
RANK_TOL = 1e-10
#: Largest relative part of ``z`` allowed outside the retained eigenspace.
RANGE_TOL = 1e-6
#: Scaled eigen-directions below this fraction of the largest are left out of
#: the weights used for estimation. On M(98) this costs < 0.5% of tau2 but keeps
#: finite-sample weights from exploiting near-collinear triples, which otherwise
#: feeds back through the iteration at strongly negative shapes.
WEIGHT_RCUT = 1e-6
DEFAULT_ITERS = 5
MAX_RESELECT = 100


@dataclass(frozen=True, eq=False)
class TripleSet:
    """``m`` distinct percentile triples, optionally with combination weights.

    Attributes
    ----------
    triples : ndarray, shape (m, 3)
        Each row strictly increasing inside (0, 1).
    weights : ndarray, shape (m,), optional
        Must sum to one.
    """

    triples: np.ndarray
    weights: Optional[np.ndarray] = None
    percentiles: np.ndarray = field(init=False, repr=False)
    index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        t = np.array(self.triples, dtype=float, ndmin=2)
        if t.ndim != 2 or t.shape[1] != 3 or t.shape[0] < 1:
            raise DomainError(f"triples must have shape (m, 3), got {t.shape}")
        if not np.all((t[:, 0] > 0) & (t[:, 0] < t[:, 1]) & (t[:, 1] < t[:, 2]) & (t[:, 2] < 1)):
            raise DomainError("every triple needs 0 < q1 < q2 < q3 < 1")
        if np.unique(t, axis=0).shape[0] != t.shape[0]:
            raise DomainError("triples must be pairwise distinct")
        t.setflags(write=False)
        object.__setattr__(self, "triples", t)
        if self.weights is not None:
            w = np.array(self.weights, dtype=float)
            if w.shape != (t.shape[0],):
                raise DomainError(f"expected {t.shape[0]} weights, got shape {w.shape}")
            if abs(math.fsum(w) - 1.0) > 1e-12:
                raise DomainError(f"weights must sum to 1, got {math.fsum(w)!r}")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)
        pct, inv = np.unique(t, return_inverse=True)
        object.__setattr__(self, "percentiles", pct)
        object.__setattr__(self, "index", inv.reshape(t.shape))

    @property
    def m(self) -> int:
        return self.triples.shape[0]

    def subset(self, keep) -> "TripleSet":
        """Triples selected by a boolean mask or index array (weights dropped)."""
        return TripleSet(self.triples[keep])

    def with_weights(self, weights) -> "TripleSet":
        return TripleSet(self.triples, weights)

    @cached_property
    def structural_rank(self) -> int:
        """Rank of the gradient rows, evaluated at the Gumbel shape."""
        g = _gradient_matrix(self, 0.0, 0.0, 1.0)
        g /= np.linalg.norm(g, axis=1)[:, None]
        sv = np.linalg.svd(g, compute_uv=False)
        return max(1, int(np.count_nonzero(sv > RANK_TOL * sv[0])))


@dataclass(frozen=True, eq=False)
class LambdaMatrix:
    """Asymptotic covariance of the per-triple shape estimates.

    ``rank`` is the structural rank; eigen-directions beyond it carry only
    rounding noise and are ignored by :func:`optimal_weights`. Spectral
    quantities refer to the scaled matrix ``D Lambda D`` with
    ``D = diag(Lambda)^(-1/2)``.
    """

    matrix: np.ndarray
    xi_at: float = math.nan
    rank: Optional[int] = None

    def __post_init__(self):
        a = np.array(self.matrix, dtype=float, ndmin=2)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DomainError(f"Lambda must be square, got {a.shape}")
        object.__setattr__(self, "matrix", 0.5 * (a + a.T))
        r = a.shape[0] if self.rank is None else int(self.rank)
        if not 1 <= r <= a.shape[0]:
            raise DomainError(f"rank must lie in [1, {a.shape[0]}], got {r}")
        object.__setattr__(self, "rank", r)

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def scale(self) -> np.ndarray:
        """``diag(Lambda)^(-1/2)``, or zeros if a diagonal entry is not positive."""
        d = np.diag(self.matrix)
        if not np.all(d > 0):
            return np.zeros_like(d)
        return 1.0 / np.sqrt(d)

    @cached_property
    def _scaled_eig(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.matrix * self.scale[:, None] * self.scale[None, :]
        vals, vecs = np.linalg.eigh(0.5 * (c + c.T))
        return vals[::-1], vecs[:, ::-1]

    def rcond(self) -> float:
        """Ratio of the smallest retained scaled eigenvalue to the largest."""
        vals, _ = self._scaled_eig
        if not vals[0] > 0:
            return 0.0
        return float(vals[self.rank - 1] / vals[0])

    def is_robust(self) -> bool:
        return self.rcond() > RCOND_MIN

    def variance(self, w) -> float:
        """Asymptotic variance ``w Lambda w^T`` of a combination."""
        w = np.asarray(w, dtype=float)
        return float(w @ self.matrix @ w)


def _gradient_matrix(M: TripleSet, xi: float, mu: float, sigma: float) -> np.ndarray:
    """``m x k`` matrix whose row ``s`` is ``W(q^s)`` scattered onto the percentiles."""
    theta = GevParams(xi, mu, sigma)
    t = quantile(theta, M.percentiles)[M.index]
    ll = loglog(M.percentiles)[M.index]
    w = w_rows(xi, ll, t, sigma)
    g = np.zeros((M.m, M.percentiles.size))
    np.put_along_axis(g, M.index, w, axis=1)
    return g


def lambda_matrix(M: TripleSet, xi: float, mu: float = 0.0, sigma: float = 1.0) -> LambdaMatrix:
    """Covariance ``Lambda(s, t) = W(q^s) K(q^s, q^t) W(q^t)^T`` of the shape estimates.

    The result does not depend on ``mu`` and ``sigma``; they are accepted so
    that the invariance can be checked.
    """
    g = _gradient_matrix(M, float(xi), mu, sigma)
    lam = g @ sigma_T((xi, mu, sigma), M.percentiles) @ g.T
    return LambdaMatrix(lam, float(xi), M.structural_rank)


def optimal_weights(L: LambdaMatrix, cutoff: float = 0.0) -> tuple[np.ndarray, float]:
    """Minimum-variance weights summing to one, and the attained variance.

    Parameters
    ----------
    cutoff : float
        Scaled eigenvalues below ``cutoff`` times the largest are dropped
        (truncated spectral solve). 0 keeps the full structural rank.

    Returns
    -------
    weights : ndarray
    tau2 : float
        ``1 / (z^T Lambda^+ z)``.

    Raises
    ------
    RobustnessError
        If Lambda is numerically singular beyond its structural rank; draw a
        different triple set.
    """
    if not L.is_robust():
        raise RobustnessError(
            f"Lambda is singular (rcond {L.rcond():.3g} <= {RCOND_MIN:g}); select another triple set"
        )
    # With w = D u the problem becomes min u C u^T subject to <D z, u> = 1.
    d = L.scale
    if L.rank == L.m and cutoff <= 0:
        c = L.matrix * d[:, None] * d[None, :]
        y = scipy.linalg.solve(0.5 * (c + c.T), d, assume_a="sym")
    else:
        vals, vecs = L._scaled_eig
        vals, vecs = vals[: L.rank], vecs[:, : L.rank]
        proj = vecs.T @ d
        if np.linalg.norm(d - vecs @ proj) > RANGE_TOL * np.linalg.norm(d):
            raise RobustnessError("the unit vector is not in the range of Lambda; select another triple set")
        keep = max(1, int(np.count_nonzero(vals > cutoff * vals[0])))
        y = vecs[:, :keep] @ (proj[:keep] / vals[:keep])
    denom = float(d @ y)
    if not denom > 0:
        raise RobustnessError("Lambda gives a non-positive optimal variance; select another triple set")
    w = d * y / denom
    # Exact normalization; the solve leaves sum(w) off by a few ulps.
    return w / math.fsum(w), 1.0 / denom


def is_robust(M: TripleSet, xi: float) -> bool:
    """Whether Lambda at ``xi`` is well conditioned on its structural rank."""
    return lambda_matrix(M, xi).is_robust()


def equidistant_percentiles(r: int) -> np.ndarray:
    """The grid ``{1/r, ..., (r-1)/r}``."""
    return np.arange(1, r) / r


def select_random_triples(m: int, rng, r: Optional[int] = None) -> TripleSet:
    """Draw ``m`` distinct triples uniformly from the grid ``{j / r}``.

    ``r`` defaults to ``m + 2``, which needs ``m >= 3`` for enough triples.

    Raises
    ------
    DomainError
        If fewer than ``m`` distinct triples exist on the grid.
    """
    m = int(m)
    if m < 1:
        raise DomainError(f"m must be at least 1, got {m}")
    r = m + 2 if r is None else int(r)
    grid = equidistant_percentiles(r)
    available = math.comb(grid.size, 3)
    if m > available:
        raise DomainError(f"only {available} distinct triples on a grid of {grid.size} percentiles, asked for {m}")
    chosen: list[tuple[int, int, int]] = []
    seen: set[tuple[int, int, int]] = set()
    if 2 * m > available:
        # Dense request: a permutation of all triples avoids long rejection runs.
        pool = list(combinations(range(grid.size), 3))
        chosen = [pool[i] for i in rng.permutation(available)[:m]]
    else:
        while len(chosen) < m:
            idx = tuple(sorted(int(i) for i in rng.choice(grid.size, 3, replace=False)))
            if idx not in seen:
                seen.add(idx)
                chosen.append(idx)
    return TripleSet(grid[np.array(chosen)])


@dataclass(frozen=True, eq=False)
class MqXiResult:
    """Outcome of the iterative shape estimate.

    ``kept`` marks which input triples produced a shape estimate; ``weights``
    and ``eta`` refer to the kept triples only.
    """

    xi_hat: float
    weights: np.ndarray
    eta: np.ndarray
    kept: np.ndarray
    tau2: float
    triples: TripleSet

    @property
    def n_dropped(self) -> int:
        return int(np.count_nonzero(~self.kept))

    @property
    def negative_weights(self) -> bool:
        return bool(np.any(self.weights < 0))


def min_sample_size(M: TripleSet) -> int:
    return 10 * (M.m + 2)


def triple_estimates(M: TripleSet, z_sorted: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-triple shape estimates from a sorted sample.

    Returns ``(eta, ok, t_hat)`` where ``ok`` flags triples with strictly
    increasing empirical quantiles and a finite root; ``eta`` is NaN elsewhere.
    """
    t_pct = quantiles_from_sorted(z_sorted, M.percentiles)
    t = t_pct[M.index]
    ok = (t[:, 0] < t[:, 1]) & (t[:, 1] < t[:, 2])
    eta = np.full(M.m, np.nan)
    if ok.any():
        ll = loglog(M.percentiles)[M.index[ok]]
        to = t[ok]
        span = to[:, 2] - to[:, 0]
        b = (to[:, 2] - to[:, 1]) / span
        cb = (to[:, 1] - to[:, 0]) / span
        eta[ok] = solve_h_roots(ll[:, 0] - ll[:, 2], ll[:, 1] - ll[:, 2], b, cb)
    ok &= np.isfinite(eta)
    return eta, ok, t_pct


def _iterate(M: TripleSet, z_sorted: np.ndarray, iters: int):
    if iters < 0:
        raise DomainError(f"iters must be non-negative, got {iters}")
    n = z_sorted.size
    if n < min_sample_size(M):
        raise DomainError(f"need at least {min_sample_size(M)} observations for {M.m} triples, got {n}")
    eta_all, ok, t_pct = triple_estimates(M, z_sorted)
    if not ok.any():
        raise EstimationError("no triple produced a shape estimate")
    sub = M if ok.all() else M.subset(ok)
    eta = eta_all[ok]
    w = np.full(sub.m, 1.0 / sub.m)
    x = float(np.mean(eta))
    tau2 = math.nan
    for _ in range(iters):
        lam = lambda_matrix(sub, x)
        if not lam.is_robust():
            raise RobustnessError(f"Lambda singular at xi={x:.6g} (rcond {lam.rcond():.3g}); select another triple set")
        w, tau2 = optimal_weights(lam, WEIGHT_RCUT)
        x = float(np.dot(w, eta))
    return MqXiResult(x, w, eta, ok, tau2, sub), t_pct


def estimate_xi_iterative(M: TripleSet, data, iters: int = DEFAULT_ITERS) -> MqXiResult:
    """Iteratively reweighted multi-quantile shape estimate.

    Starts from the plain mean of the per-triple estimates, then alternates
    between optimal weights at the current shape and the weighted mean of the
    per-triple estimates.

    Raises
    ------
    DomainError
        If the sample has fewer than ``10 (m + 2)`` points.
    EstimationError
        If no triple gives an estimate.
    RobustnessError
        If Lambda becomes singular at an iterate.
    """
    z = np.sort(np.asarray(data, dtype=float))
    return _iterate(M, z, iters)[0]


@dataclass(frozen=True, eq=False)
class MqFit:
    params: GevParams
    xi_result: MqXiResult


def fit_mq(M: TripleSet, data, iters: int = DEFAULT_ITERS) -> MqFit:
    """Shape by :func:`estimate_xi_iterative`, then location and scale by least squares.

    ``T_hat(p) ~ mu + sigma Q(p; xi_hat)`` is fitted over every distinct
    percentile used by the surviving triples.
    """
    z = np.sort(np.asarray(data, dtype=float))
    res, t_pct = _iterate(M, z, iters)
    used = np.isin(M.percentiles, res.triples.percentiles)
    t = t_pct[used]
    qv = reduced_quantile(res.xi_hat, loglog(M.percentiles[used]))
    design = np.column_stack([np.ones_like(qv), qv])
    (mu, sigma), *_ = np.linalg.lstsq(design, t, rcond=None)
    if not (sigma > 0 and math.isfinite(sigma) and math.isfinite(mu)):
        raise EstimationError(f"least-squares scale is not positive ({sigma!r})")
    return MqFit(GevParams(res.xi_hat, float(mu), float(sigma)), res)


def estimate_theta_mq(M: TripleSet, data, iters: int = DEFAULT_ITERS) -> GevParams:
    """Full parameter estimate; see :func:`fit_mq`."""
    return fit_mq(M, data, iters).params


def robust_random_triples(m: int, xi: float, rng, r: Optional[int] = None) -> TripleSet:
    """Redraw random triple sets until Lambda at ``xi`` is well conditioned."""
    for _ in range(MAX_RESELECT):
        M = select_random_triples(m, rng, r)
        if is_robust(M, xi):
            return M
    raise RobustnessError(f"no robust set of {m} triples after {MAX_RESELECT} draws")


def tau2_opt(M: TripleSet, xi: float) -> float:
    return optimal_weights(lambda_matrix(M, xi))[1]


def tau2_opt_curve(xi: float, m_values, rng, nested: bool = False) -> list[tuple[int, float]]:
    """Optimal asymptotic variance against the number of triples.

    With ``nested=False`` every ``m`` gets a fresh robust set on the grid
    ``{j / (m + 2)}``. With ``nested=True`` one random ordering of triples on
    the grid for the largest ``m`` is drawn and each set is a prefix of it, so
    larger sets contain smaller ones.
    """
    ms = [int(v) for v in m_values]
    if any(b < a for a, b in zip(ms, ms[1:])):
        raise DomainError("m_values must be ascending")
    out = []
    if not nested:
        for m in ms:
            out.append((m, tau2_opt(robust_random_triples(m, xi, rng), xi)))
        return out
    for _ in range(MAX_RESELECT):
        full = select_random_triples(ms[-1], rng)
        sets = [full.subset(slice(0, m)) for m in ms]
        lams = [lambda_matrix(S, xi) for S in sets]
        if all(lam.is_robust() for lam in lams):
            return [(m, optimal_weights(lam)[1]) for m, lam in zip(ms, lams)]
    raise RobustnessError(f"no robust nested family after {MAX_RESELECT} draws")
