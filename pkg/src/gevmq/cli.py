"""Command-line interface: ``gevmq <command> [options]``.

Exit status is 0 on success, 2 on a usage error and 1 when an estimator
fails; failures also print a JSON object to stderr. Every random choice is
derived from ``--seed``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import asymptotics, harness
from .block_maxima import BOOTSTRAP_RESAMPLES, BlockConfig, bm_estimate
from .classical import Estimator, FitResult, deh_fit, mle_fit, pwm_fit
from .errors import DomainError, EstimationError, RobustnessError
from .gev import GevParams, sample
from .multi_quantile import MAX_RESELECT, fit_mq, min_sample_size, robust_random_triples, tau2_opt_curve
from .three_quantile import PercentileTriple, avar_sigma_mu


class UsageError(Exception):
    """Bad command-line input; reported with exit status 2."""


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _json_value(x):
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def read_values(path: str) -> np.ndarray:
    """Single-column numeric CSV with an optional ``value`` header."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise UsageError(f"--input: cannot read {path!r}: {exc.strerror}") from None
    out = []
    for lineno, row in enumerate(rows, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 1:
            raise UsageError(f"--input: line {lineno}: expected one column, got {len(row)}")
        cell = row[0].strip()
        if lineno == 1 and cell.lower() == "value":
            continue
        try:
            v = float(cell)
        except ValueError:
            raise UsageError(f"--input: line {lineno}: not a number: {cell!r}") from None
        if not math.isfinite(v):
            raise UsageError(f"--input: line {lineno}: non-finite value {cell!r}")
        out.append(v)
    if not out:
        raise UsageError(f"--input: {path!r} contains no values")
    return np.array(out)


def _write(text: str, path: Optional[str]) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _rows_out(rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps([{k: _json_value(v) for k, v in r.items()} for r in rows], indent=2) + "\n"
    buf = io.StringIO()
    if rows:
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(rows[0].keys())
        for r in rows:
            w.writerow([_fmt(v) for v in r.values()])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Commands

def cmd_sample(a) -> int:
    try:
        theta = GevParams(a.xi, a.mu, a.sigma)
    except DomainError as exc:
        raise UsageError(f"--sigma/--xi/--mu: {exc}") from None
    y = sample(theta, a.n, np.random.default_rng(a.seed))
    _write("value\n" + "".join(_fmt(v) + "\n" for v in y), a.output)
    return 0


def _fit_mq(data, m: int, seed: int, iters: int):
    if data.size < 10 * (m + 2):
        raise UsageError(f"--m: {m} triples need at least {10 * (m + 2)} observations, input has {data.size}")
    rng = np.random.default_rng(seed)
    last = None
    for _ in range(MAX_RESELECT):
        M = robust_random_triples(m, 0.0, rng)
        try:
            return fit_mq(M, data, iters)
        except RobustnessError as exc:
            last = exc
    raise last


def cmd_fit(a) -> int:
    data = read_values(a.input)
    est = Estimator(a.estimator.upper())
    extra = {}
    if est is Estimator.MQ:
        fit = _fit_mq(data, a.m, a.seed, a.iters)
        res = fit.xi_result
        p = fit.params
        result = FitResult(Estimator.MQ, p.xi, p.mu, p.sigma)
        w = res.weights
        extra = {"weights": {"m": int(w.size), "dropped": res.n_dropped, "min": float(w.min()),
                             "max": float(w.max()), "negative": res.negative_weights, "tau2": res.tau2}}
    elif est is Estimator.MLE:
        if data.size < 10:
            raise UsageError("--input: MLE needs at least 10 observations")
        result = mle_fit(data)
    elif est is Estimator.PWM:
        if data.size < 3:
            raise UsageError("--input: PWM needs at least 3 observations")
        result = pwm_fit(data)
    else:
        if not 1 <= a.k < data.size:
            raise UsageError(f"--k: must satisfy 1 <= k < N={data.size}")
        result = deh_fit(data, a.k)
    row = result.to_dict() | extra
    if a.format == "json":
        text = json.dumps({k: _json_value(v) if not isinstance(v, dict) else {kk: _json_value(vv) for kk, vv in v.items()}
                           for k, v in row.items()}, indent=2) + "\n"
    else:
        flat = {k: v for k, v in row.items() if k != "weights"}
        text = _rows_out([flat], "csv")
    _write(text, a.output)
    if not result.valid:
        _error(EstimationError(result.failure_reason or "invalid fit"))
        return 1
    return 0


def cmd_avar(a) -> int:
    q = None
    if a.q is not None:
        if len(a.q) != 3:
            raise UsageError("--q: expected three comma-separated percentiles")
        try:
            q = PercentileTriple.of(a.q)
        except DomainError as exc:
            raise UsageError(f"--q: {exc}") from None
    rows = []
    rng = np.random.default_rng(a.seed)
    for xi in a.xi:
        r = {"xi": xi}
        if q is not None:
            av = avar_sigma_mu(q, (xi, 0.0, 1.0))
            r |= {"q1": q.q1, "q2": q.q2, "q3": q.q3, "avar_xi": av.avar_xi, "avar_mu": av.avar_mu,
                  "avar_sigma": av.avar_sigma}
        r["crb"] = asymptotics.crb_xi_bridged(xi) if xi > -0.5 else None
        r["pwm_avar"] = asymptotics.pwm_avar(xi) if xi < 0.5 else None
        r["deh_avar"] = asymptotics.deh_avar(xi)
        if a.m is not None:
            row = asymptotics.table2_row(xi, a.n, a.m, rng)
            r |= {"n": a.n, "se_mq": row.mq, "se_mle": row.mle, "se_pwm": row.pwm}
        rows.append(r)
    _write(_rows_out(rows, a.format), a.output)
    return 0


def cmd_optimal_triplet(a) -> int:
    rows = []
    for xi in a.xi:
        if not -5 <= xi <= 5:
            raise UsageError(f"--xi: {xi} outside [-5, 5]")
        o = asymptotics.optimal_triplet(xi, step=a.step)
        rows.append({"xi": xi, "q1": o.q.q1, "q2": o.q.q2, "q3": o.q.q3, "avar": o.avar_star,
                     "crb": o.crb, "efficiency": o.efficiency})
    _write(_rows_out(rows, a.format), a.output)
    return 0


def _threads(a) -> int:
    if a.threads is not None:
        return a.threads
    try:
        return harness.default_threads()
    except DomainError as exc:
        raise UsageError(str(exc)) from None


def cmd_mc_compare(a) -> int:
    try:
        grid = harness.ExperimentGrid(tuple(a.xi), n=a.n, reps=a.reps, estimators=tuple(e.upper() for e in a.estimators),
                                      master_seed=a.seed, m_triples=a.m, deh_k=a.deh_k, deh_n=a.deh_n)
    except (DomainError, ValueError) as exc:
        raise UsageError(f"mc-compare: {exc}") from None
    if Estimator.MQ in grid.estimators and grid.n < 10 * (grid.m_triples + 2):
        raise UsageError(f"--m: {grid.m_triples} triples need -n >= {10 * (grid.m_triples + 2)}")
    reports = harness.run_grid(grid, threads=_threads(a), timing=a.timing)
    text = harness.reports_to_json(reports) if a.format == "json" else harness.reports_to_csv(reports)
    _write(text, a.output)
    if a.table:
        sys.stderr.write(harness.format_table(reports))
    return 0


def cmd_tau2_curve(a) -> int:
    ms = sorted(a.m_values)
    if ms[0] < 3:
        raise UsageError("--m-values: every m must be at least 3")
    rng = np.random.default_rng(a.seed)
    curve = tau2_opt_curve(a.xi, ms, rng, nested=a.nested)
    _write(_rows_out([{"xi": a.xi, "m": m, "tau2_opt": t} for m, t in curve], a.format), a.output)
    return 0


def cmd_block_maxima(a) -> int:
    data = read_values(a.input)
    nb = data.size // a.block_size
    try:
        cfg = BlockConfig(a.block_size, nb)
    except DomainError as exc:
        raise UsageError(f"--block-size: {exc}") from None
    if nb < min_sample_size_for(a.m):
        raise UsageError(f"--m: {a.m} triples need {min_sample_size_for(a.m)} blocks, input gives {nb}")
    rng = np.random.default_rng(a.seed)
    M = robust_random_triples(a.m, 0.0, rng)
    res = bm_estimate(data, cfg, M, bootstrap=a.bootstrap, seed=a.seed)
    lo, hi = res.xi_interval if res.xi_interval else (None, None)
    row = res.fit.to_dict() | {"block_size": cfg.block_size, "n_blocks": cfg.n_blocks, "xi_lo": lo, "xi_hi": hi}
    _write(_rows_out([row], a.format), a.output)
    if not res.fit.valid:
        _error(EstimationError(res.fit.failure_reason or "invalid fit"))
        return 1
    return 0


def min_sample_size_for(m: int) -> int:
    return 10 * (m + 2)


# ---------------------------------------------------------------------------
# Parser

def _common_out(p, fmt=True):
    p.add_argument("-o", "--output", default=None, help="output file (default: stdout)")
    if fmt:
        p.add_argument("--format", choices=("csv", "json"), default="csv", help="output format (default: csv)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gevmq", description="Quantile-based GEV shape estimation.")
    parser.add_argument("--config", metavar="FILE", help="key=value file of default option values; flags override")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("sample", help="draw a GEV sample")
    p.add_argument("--xi", type=float, required=True, help="shape (dimensionless)")
    p.add_argument("--mu", type=float, default=0.0, help="location (data units, default 0)")
    p.add_argument("--sigma", type=float, default=1.0, help="scale (data units, > 0, default 1)")
    p.add_argument("-n", type=positive_int, required=True, help="sample size (count)")
    p.add_argument("--seed", type=int, default=0, help="random seed (integer)")
    _common_out(p, fmt=False)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("fit", help="fit one estimator to a data column")
    p.add_argument("--input", required=True, help="single-column CSV (optional header 'value')")
    p.add_argument("--estimator", choices=("mq", "mle", "pwm", "deh"), default="mq", help="estimator (default mq)")
    p.add_argument("--m", type=positive_int, default=98, help="MQ: number of triples (count, default 98)")
    p.add_argument("--iters", type=int, default=5, help="MQ: reweighting iterations (count, default 5)")
    p.add_argument("--k", type=positive_int, default=100, help="DEH: top order statistics used (count, default 100)")
    p.add_argument("--seed", type=int, default=0, help="random seed for triple selection (integer)")
    _common_out(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("avar", help="theoretical asymptotic variances")
    p.add_argument("--xi", type=float_list, required=True, help="shape value(s), comma-separated (dimensionless)")
    p.add_argument("--q", type=float_list, default=None, help="percentile triple q1,q2,q3 (probabilities)")
    p.add_argument("--m", type=positive_int, default=None, help="also give standard errors with an MQ set of m triples")
    p.add_argument("-n", type=positive_int, default=1000, help="nominal sample size for standard errors (count)")
    p.add_argument("--seed", type=int, default=0, help="random seed for triple selection (integer)")
    _common_out(p)
    p.set_defaults(func=cmd_avar)

    p = sub.add_parser("optimal-triplet", help="variance-minimizing percentile triple")
    p.add_argument("--xi", type=float_list, required=True, help="shape value(s) in [-5, 5], comma-separated")
    p.add_argument("--step", type=float, default=asymptotics.GRID_STEP, help="coarse grid step (probability)")
    _common_out(p)
    p.set_defaults(func=cmd_optimal_triplet)

    p = sub.add_parser("mc-compare", help="Monte Carlo comparison of estimators")
    p.add_argument("--xi", type=float_list, required=True, help="shape values, comma-separated (dimensionless)")
    p.add_argument("-n", type=positive_int, default=1000, help="sample size per replicate (count, >= 100)")
    p.add_argument("--reps", type=positive_int, default=1000, help="replicates per shape (count)")
    p.add_argument("--estimators", type=lambda s: [v for v in s.split(",") if v], default=["mq", "mle", "pwm", "deh"],
                   help="comma-separated subset of mq,mle,pwm,deh")
    p.add_argument("--m", type=positive_int, default=98, help="MQ: number of triples (count)")
    p.add_argument("--deh-k", type=positive_int, default=100, help="DEH: top order statistics (count)")
    p.add_argument("--deh-n", type=positive_int, default=10_000, help="DEH: sample size per replicate (count)")
    p.add_argument("--seed", type=int, default=0, help="master seed (integer)")
    p.add_argument("--threads", type=positive_int, default=None,
                   help="worker processes (count; default $GEVMQ_THREADS or 1); output does not depend on it")
    p.add_argument("--timing", action="store_true", help="fill wall_ms (makes output machine-dependent)")
    p.add_argument("--table", action="store_true", help="also print a stderr table to the error stream")
    _common_out(p)
    p.set_defaults(func=cmd_mc_compare)

    p = sub.add_parser("tau2-curve", help="optimal MQ variance against the number of triples")
    p.add_argument("--xi", type=float, required=True, help="shape (dimensionless)")
    p.add_argument("--m-values", type=int_list, default=[10, 20, 40, 80], help="comma-separated counts")
    p.add_argument("--nested", action="store_true", help="use nested sets (prefixes of one random ordering)")
    p.add_argument("--seed", type=int, default=0, help="random seed (integer)")
    _common_out(p)
    p.set_defaults(func=cmd_tau2_curve)

    p = sub.add_parser("block-maxima", help="MQ fit to block maxima of a raw series")
    p.add_argument("--input", required=True, help="single-column CSV (optional header 'value')")
    p.add_argument("--block-size", type=positive_int, required=True, help="observations per block (count)")
    p.add_argument("--m", type=positive_int, default=98, help="number of triples (count)")
    p.add_argument("--bootstrap", type=int, default=BOOTSTRAP_RESAMPLES, help="bootstrap resamples (count, 0 disables)")
    p.add_argument("--seed", type=int, default=0, help="random seed (integer)")
    _common_out(p)
    p.set_defaults(func=cmd_block_maxima)
    return parser


def read_config(path: str) -> dict[str, str]:
    out = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"--config: cannot read {path!r}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"--config: line {lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg = read_config(known.config)
    cmd = next((a for a in rest if not a.startswith("-")), None)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sp = subparsers.choices.get(cmd)
    if sp is None:
        return
    for action in sp._actions:
        if action.dest in cfg:
            raw = cfg[action.dest]
            if isinstance(action, argparse._StoreTrueAction):
                action.default = raw.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    action.default = action.type(raw) if action.type else raw
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise UsageError(f"--config: {action.dest}: {exc}") from None
                if action.choices is not None and action.default not in action.choices:
                    raise UsageError(f"--config: {action.dest}: {raw!r} not in {list(action.choices)}")
            action.required = False


def _error(exc: BaseException) -> None:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"gevmq: error: {exc}\n")
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"gevmq {args.command}: error: {exc}\n")
        return 2
    except (EstimationError, DomainError) as exc:
        _error(exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
