"""Deterministic Monte Carlo comparison of shape estimators.

Every replicate draws from its own generator, seeded by a bijective mix of
``(master_seed, xi_index, replicate)``. Results are gathered in replicate order
before any reduction, so reports are bitwise identical for any worker count.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .classical import Estimator, deh_fit, mle_fit, pwm_fit
from .errors import DomainError, EstimationError
from .gev import sample
from .multi_quantile import MAX_RESELECT, TripleSet, estimate_xi_iterative, is_robust, select_random_triples

CSV_FIELDS = ("estimator", "xi", "n", "reps", "bias", "stderr", "failure_rate", "wall_ms")
_MASK64 = (1 << 64) - 1
_REP_BITS = 40


def splitmix64(x: int) -> int:
    """The SplitMix64 output function (a bijection on 64-bit integers)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def replicate_seed(master_seed: int, xi_index: int, rep: int) -> int:
    """Seed of one replicate; distinct for distinct ``(xi_index, rep)`` under one master.

    The pair is packed into one word (``rep < 2^40``, ``xi_index < 2^24``) and
    pushed through a bijection keyed by the master seed, so no two replicates
    of a grid can share a seed.
    """
    if not (0 <= rep < (1 << _REP_BITS) and 0 <= xi_index < (1 << (64 - _REP_BITS))):
        raise DomainError("replicate or xi index out of range")
    key = (xi_index << _REP_BITS) | rep
    return splitmix64(key ^ splitmix64(master_seed & _MASK64))


@dataclass(frozen=True)
class ExperimentGrid:
    xi_list: tuple[float, ...]
    n: int = 1000
    reps: int = 1000
    estimators: tuple[Estimator, ...] = (Estimator.MQ, Estimator.MLE, Estimator.PWM, Estimator.DEH)
    master_seed: int = 0
    m_triples: int = 98
    deh_k: int = 100
    deh_n: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "xi_list", tuple(float(x) for x in self.xi_list))
        object.__setattr__(self, "estimators", tuple(Estimator(e) for e in self.estimators))
        if self.reps < 1:
            raise DomainError(f"reps must be at least 1, got {self.reps}")
        if self.n < 100:
            raise DomainError(f"n must be at least 100, got {self.n}")
        if not self.xi_list:
            raise DomainError("xi_list is empty")

    def sample_size(self, est: Estimator) -> int:
        return self.deh_n if est is Estimator.DEH else self.n


@dataclass(frozen=True)
class McReport:
    """Summary of one (estimator, xi) cell.

    ``bias`` and ``stderr`` use valid replicates only. ``flag`` notes
    degenerate aggregates, e.g. a single usable replicate.
    """

    estimator: str
    xi: float
    n: int
    reps: int
    reps_used: int
    bias: float
    stderr: float
    failure_rate: float
    wall_ms: Optional[int] = None
    flag: Optional[str] = None


def triples_for_grid(grid: ExperimentGrid) -> TripleSet:
    """A triple set drawn from the master seed that is robust at every grid shape."""
    rng = np.random.default_rng([grid.master_seed & _MASK64, 0x4D51])
    for _ in range(MAX_RESELECT):
        M = select_random_triples(grid.m_triples, rng)
        if all(is_robust(M, xi) for xi in grid.xi_list):
            return M
    raise EstimationError(f"no triple set of size {grid.m_triples} is robust over the grid")


def _fit_one(est: Estimator, data: np.ndarray, grid: ExperimentGrid, M: TripleSet) -> float:
    """Shape estimate, or NaN when the fit is invalid."""
    if est is Estimator.MQ:
        try:
            return estimate_xi_iterative(M, data).xi_hat
        except (EstimationError, DomainError):
            return math.nan
    if est is Estimator.MLE:
        r = mle_fit(data)
    elif est is Estimator.PWM:
        r = pwm_fit(data)
    else:
        r = deh_fit(data, grid.deh_k)
    return r.xi_hat if r.valid else math.nan


def _run_chunk(args) -> np.ndarray:
    grid, M, xi_index, start, stop = args
    xi = grid.xi_list[xi_index]
    out = np.full((stop - start, len(grid.estimators)), np.nan)
    size = max(grid.sample_size(e) for e in grid.estimators)
    for row, rep in enumerate(range(start, stop)):
        rng = np.random.default_rng(replicate_seed(grid.master_seed, xi_index, rep))
        data = sample((xi, 0.0, 1.0), size, rng)
        for col, est in enumerate(grid.estimators):
            # Estimators needing fewer points use a prefix of the same draw.
            out[row, col] = _fit_one(est, data[: grid.sample_size(est)], grid, M)
    return out


def _chunks(grid: ExperimentGrid, M: TripleSet, chunk: int):
    for i in range(len(grid.xi_list)):
        for start in range(0, grid.reps, chunk):
            yield (grid, M, i, start, min(grid.reps, start + chunk))


def aggregate(estimates: np.ndarray, xi: float) -> tuple[int, float, float, float]:
    """``(reps_used, bias, stderr, failure_rate)`` in fixed index order."""
    valid = estimates[np.isfinite(estimates)]
    used = valid.size
    fail = 1.0 - used / estimates.size
    if used == 0:
        return 0, math.nan, math.nan, fail
    mean = math.fsum(valid) / used
    if used == 1:
        return 1, mean - xi, 0.0, fail
    sd = math.sqrt(math.fsum((valid - mean) ** 2) / (used - 1))
    return used, mean - xi, sd, fail


def run_grid(grid: ExperimentGrid, threads: int = 1, chunk: int = 25, timing: bool = False) -> list[McReport]:
    """Simulate, fit and summarize every (shape, estimator) cell of ``grid``.

    ``timing=True`` fills ``wall_ms`` with the elapsed time per shape; it is
    left empty otherwise so that the output depends only on the grid.
    """
    M = triples_for_grid(grid) if Estimator.MQ in grid.estimators else None
    tasks = list(_chunks(grid, M, chunk))
    t0 = time.perf_counter()
    if threads <= 1:
        parts = [_run_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run_chunk, tasks))
    elapsed_ms = int(round((time.perf_counter() - t0) * 1000 / len(grid.xi_list)))
    per_xi: dict[int, list[np.ndarray]] = {}
    for (_, _, i, _, _), part in zip(tasks, parts):
        per_xi.setdefault(i, []).append(part)
    reports = []
    for i, xi in enumerate(grid.xi_list):
        block = np.vstack(per_xi[i])
        for col, est in enumerate(grid.estimators):
            used, bias, sd, fail = aggregate(block[:, col], xi)
            flag = "single replicate: stderr undefined" if used == 1 else ("no valid replicate" if used == 0 else None)
            reports.append(McReport(est.value, xi, grid.sample_size(est), grid.reps, used, bias, sd, fail,
                                    elapsed_ms if timing else None, flag))
    return reports


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def reports_to_csv(reports: Iterable[McReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in reports:
        w.writerow([_fmt(getattr(r, f)) for f in CSV_FIELDS])
    return buf.getvalue()


def reports_to_json(reports: Iterable[McReport]) -> str:
    rows = []
    for r in reports:
        d = {f: getattr(r, f) for f in CSV_FIELDS}
        rows.append({k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()})
    return json.dumps(rows, indent=2) + "\n"


def format_table(reports: Sequence[McReport]) -> str:
    """Plain-text stderr table (rows: shape, columns: estimator).

    Cells whose failure rate exceeds one half are shown as ``NaN``.
    """
    ests = list(dict.fromkeys(r.estimator for r in reports))
    xis = list(dict.fromkeys(r.xi for r in reports))
    cell = {(r.xi, r.estimator): r for r in reports}
    lines = ["xi".rjust(8) + "".join(e.rjust(10) for e in ests)]
    for xi in xis:
        row = f"{xi:8.3g}"
        for e in ests:
            r = cell.get((xi, e))
            if r is None:
                row += "".rjust(10)
            elif r.failure_rate > 0.5 or not math.isfinite(r.stderr):
                row += "NaN".rjust(10)
            else:
                row += f"{r.stderr:10.3f}"
        lines.append(row)
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class TimingRow:
    n: int
    estimator: str
    median_ms: float
    p5_ms: float
    p95_ms: float


def timing_benchmark(xi: float, n_list: Sequence[int], reps: int, seed: int = 0) -> list[TimingRow]:
    """Wall time per fit of MQ and MLE for each sample size (single process).

    Absolute numbers are machine-dependent; only their ordering is of interest.
    """
    if reps < 1:
        raise DomainError(f"reps must be at least 1, got {reps}")
    rows = []
    rng = np.random.default_rng(seed)
    for n in n_list:
        m = min(98, int(n) // 10 - 2)
        if m < 3:
            raise DomainError(f"n={n} is too small for a multi-quantile fit")
        M = select_random_triples(m, np.random.default_rng([seed, int(n)]))
        times = {"MQ": [], "MLE": []}
        for _ in range(reps):
            data = sample((xi, 0.0, 1.0), int(n), rng)
            t = time.perf_counter()
            try:
                estimate_xi_iterative(M, data)
            except EstimationError:
                pass
            times["MQ"].append((time.perf_counter() - t) * 1000)
            t = time.perf_counter()
            mle_fit(data)
            times["MLE"].append((time.perf_counter() - t) * 1000)
        for est, ts in times.items():
            p5, med, p95 = np.percentile(ts, [5, 50, 95])
            rows.append(TimingRow(int(n), est, float(med), float(p5), float(p95)))
    return rows


def default_threads() -> int:
    """Worker count from ``GEVMQ_THREADS``, else 1."""
    v = os.environ.get("GEVMQ_THREADS")
    if not v:
        return 1
    try:
        n = int(v)
    except ValueError:
        raise DomainError(f"GEVMQ_THREADS must be an integer, got {v!r}") from None
    if n < 1:
        raise DomainError(f"GEVMQ_THREADS must be positive, got {n}")
    return n


__all__ = [
    "CSV_FIELDS", "ExperimentGrid", "McReport", "TimingRow", "aggregate", "default_threads",
    "format_table", "replicate_seed", "reports_to_csv", "reports_to_json", "run_grid", "splitmix64",
    "timing_benchmark", "triples_for_grid",
]
