"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 data error, 4 estimation failure.
Result files are written only below ``--out``; diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .brs import DEFAULT_WINDOW, fit_brs
from .data import INTERCEPT, INTERCEPT_ONLY, ModelSpec, load_csv, read_columns
from .es import decompose
from .exceptions import (DataError, EstimationError, LevelError, MesRegError, SchemaError,
                         SimulationError)
from .mes import fit_joint
from .portfolio import DEFAULT_MAX_ITER, DEFAULT_TOL, backtest
from .simulation import (MES_TILDE_TABLE, PAPER_SIGMA, SimConfig, mes_tilde,
                         mes_tilde_monte_carlo, run_grid, run_monte_carlo)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ESTIMATION = 0, 2, 3, 4
SCHEMA_VERSION = 1
SEED_ENV = "MESREG_SEED"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument types
# ---------------------------------------------------------------------------

def level_type(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"level must lie strictly between 0 and 1, got {v}")
    return v


def positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {v}")
    return v


def seed_type(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def column_list(text):
    cols = [c.strip() for c in text.split(",") if c.strip()]
    if not cols:
        raise argparse.ArgumentTypeError("expected a comma-separated list of columns")
    return cols


def float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from None


def resolve_seed(seed):
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return seed
    try:
        return seed_type(env)
    except argparse.ArgumentTypeError as exc:
        raise UsageError(f"{SEED_ENV}: {exc}") from None


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, doc):
    payload = {"schema_version": SCHEMA_VERSION, **doc}
    Path(path).write_text(json.dumps(_clean(payload), indent=2) + "\n", encoding="utf-8")


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for v in row])


def out_dir(args):
    if args.out is None:
        return None
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _schema(args):
    return {"y": args.y, "x": args.x, "z_v": _covariates(args.zv), "z_m": _covariates(args.zm)}


def _covariates(cols):
    if cols == [INTERCEPT_ONLY]:
        return [INTERCEPT]
    return cols


def _labels(cols):
    return tuple("intercept" if c == INTERCEPT else c for c in _covariates(cols))


def fit_document(fit, level, beta):
    doc = {
        "beta": beta,
        "n": fit.n,
        "exceedances": fit.exceedance_count,
        "converged": fit.converged,
        "loss_values": {"var": fit.loss_values[0], "mes": fit.loss_values[1]},
        "bandwidth": fit.bandwidth,
        "warnings": list(fit.warnings),
        "parameters": [],
    }
    est = np.concatenate([fit.theta_v, fit.theta_m])
    if fit.inference_ok:
        rep = fit.report(level)
        doc["level"] = level
        doc["parameters"] = [
            {"name": r[0], "estimate": r[1], "se": r[2], "t": r[3], "p": r[4],
             "ci_lower": r[5], "ci_upper": r[6]} for r in rep.rows()]
        doc["avar"] = fit.avar
    else:
        doc["parameters"] = [{"name": n, "estimate": float(e), "se": None}
                             for n, e in zip(fit.names, est)]
        doc["avar"] = None
    d = fit.diagnostics
    if d is not None:
        doc["diagnostics"] = {
            "V": d.V, "Lambda": d.Lambda, "M_star": d.M_star, "Lambda1": d.Lambda1,
            "Lambda2": d.Lambda2, "cond_lambda": d.cond_lambda, "cond_lambda1": d.cond_lambda1,
            "kernel_count": d.kernel_count,
        }
    return doc


def print_table(fit, level, stream):
    print(f"n = {fit.n}, exceedances = {fit.exceedance_count}, "
          f"bandwidth = {fit.bandwidth if fit.bandwidth is not None else 'NA'}", file=stream)
    if not fit.inference_ok:
        for n, e in zip(fit.names, np.concatenate([fit.theta_v, fit.theta_m])):
            print(f"{n:<20s} {e:>12.6f}", file=stream)
        return
    pct = f"{100 * level:g}%"
    print(f"{'parameter':<20s} {'estimate':>12s} {'se':>10s} {'t':>8s} {'p':>8s} "
          f"{pct + ' CI':>25s}", file=stream)
    for name, e, se, t, p, lo, hi in fit.report(level).rows():
        print(f"{name:<20s} {e:>12.6f} {se:>10.6f} {t:>8.3f} {p:>8.4f} "
              f"[{lo:>10.5f}, {hi:>10.5f}]", file=stream)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_fit(args):
    ds = load_csv(args.input, _schema(args))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        fit = fit_joint(ds, ModelSpec(args.beta))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    doc = fit_document(fit, args.level, args.beta)
    doc["input"] = str(args.input)
    print_table(fit, args.level, sys.stdout)
    d = out_dir(args)
    if d is not None:
        write_json(d / "fit.json", doc)
        mes = fit.mes_fit.fitted
        write_csv(d / "fitted.csv", ["t", "x", "y", "var", "mes", "exceed"],
                  [(t, float(ds.x[t]), float(ds.y[t]), float(fit.var_fit.fitted[t]),
                    float(mes[t]), int(fit.var_fit.exceed_mask[t])) for t in range(ds.n)])
    return EXIT_OK


def cmd_simulate(args):
    seed = resolve_seed(args.seed)
    if args.grid:
        results = run_grid(m_reps=args.reps, seed=seed, threads=args.threads)
    else:
        cfg = SimConfig(n=args.n, m_reps=args.reps, beta=args.beta, seed=seed)
        results = {(args.beta, args.n): run_monte_carlo(cfg, threads=args.threads)}
    d = out_dir(args)
    for (beta, n), res in results.items():
        text = res.to_csv()
        if len(results) > 1:
            print(f"# beta={beta} n={n}")
        sys.stdout.write(text)
        if d is not None:
            stem = "summary" if len(results) == 1 else f"summary_beta{beta}_n{n}"
            (d / f"{stem}.csv").write_text(text, encoding="utf-8")
            (d / f"{stem}.json").write_text(res.to_json() + "\n", encoding="utf-8")
    for res in results.values():
        if res.n_fail:
            print(f"warning: {res.n_fail} replications failed and were excluded",
                  file=sys.stderr)
    return EXIT_OK


def cmd_brs(args):
    schema = {"y": args.y, "x": args.x, "z_v": [INTERCEPT], "z_m": _covariates(args.zm)}
    ds = load_csv(args.input, schema)
    fit = fit_brs(ds, args.window, args.beta)
    names = fit.names or tuple(str(j) for j in range(fit.theta.size))
    print(f"window S = {fit.window}, observations = {fit.y_star.size}")
    for n, e, s in zip(names, fit.theta, fit.se_ols):
        print(f"{n:<20s} {e:>12.6f} {s:>10.6f}")
    d = out_dir(args)
    if d is not None:
        write_json(d / "brs.json", {
            "beta": args.beta, "window": fit.window, "input": str(args.input),
            "parameters": [{"name": n, "estimate": e, "se_ols": s}
                           for n, e, s in zip(names, fit.theta, fit.se_ols)]})
        write_csv(d / "y_star.csv", ["t", "y_star"],
                  [(fit.window + i, float(v)) for i, v in enumerate(fit.y_star)])
    return EXIT_OK


def cmd_decompose(args):
    _, cols = read_columns(args.input)
    needed = [args.x, *args.components, *_covariates(args.zv), *_covariates(args.zm)]
    for c in needed:
        if c != INTERCEPT and c not in cols:
            raise SchemaError(f"missing column '{c}'")
    n = len(cols[args.x])
    Y = np.column_stack([cols[c] for c in args.components])
    weights = args.weights if args.weights is not None else [1.0] * Y.shape[1]
    if len(weights) != Y.shape[1]:
        raise UsageError(f"{len(weights)} weights for {Y.shape[1]} components")

    def design(names):
        return np.column_stack([np.ones(n) if c == INTERCEPT else cols[c] for c in names])

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        dec = decompose(cols[args.x], Y, np.asarray(weights), design(_covariates(args.zv)),
                        design(_covariates(args.zm)), args.beta, names=args.components,
                        v_names=_labels(args.zv), m_names=_labels(args.zm))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print(f"ES regression of {args.x}:")
    print_table(dec.es, args.level, sys.stdout)
    for name, f in zip(dec.names, dec.components):
        print(f"\nMES regression of {name}:")
        print_table(f, args.level, sys.stdout)
    print(f"\nreconciliation (ES minus weighted MES): {np.array2string(dec.reconciliation)}")
    d = out_dir(args)
    if d is not None:
        write_json(d / "decompose.json", {
            "input": str(args.input), "weights": list(weights),
            "es": {"outcome": args.x, **fit_document(dec.es, args.level, args.beta)},
            "components": [{"outcome": nm, **fit_document(f, args.level, args.beta)}
                           for nm, f in zip(dec.names, dec.components)],
            "reconciliation": dec.reconciliation})
    return EXIT_OK


def cmd_erc(args):
    _, cols = read_columns(args.input)
    z_names = _covariates(args.z)
    for c in [*args.assets, *z_names]:
        if c != INTERCEPT and c not in cols:
            raise SchemaError(f"missing column '{c}'")
    Y = np.column_stack([cols[c] for c in args.assets])
    T = Y.shape[0]
    z = np.column_stack([np.ones(T) if c == INTERCEPT else cols[c] for c in z_names])
    start = args.start if args.start is not None else T // 2
    if not 0 < start < T:
        raise UsageError(f"--start must lie in 1..{T - 1}")
    dates = np.arange(start, T, args.step)
    if dates.size < 2:
        raise UsageError("the backtest needs at least two forecast dates")
    erc = backtest(Y, z, args.beta, dates, "erc", args.tol, args.max_iter)
    ew = backtest(Y, z, args.beta, dates, "ew")
    n_conv = sum(s.converged for s in erc.states)
    print(f"forecast dates: {dates.size}, converged: {n_conv}")
    for label, bt in (("ERC", erc), ("EW", ew)):
        m = bt.metrics
        print(f"{label:<4s} avg {m.avg_return:.4f}  std {m.std:.4f}  VaR {m.var:.4f}  "
              f"ES {m.es:.4f}  Sharpe {_na(m.sharpe)}  RORAC {_na(m.rorac)}")
    if n_conv < dates.size:
        print(f"warning: {dates.size - n_conv} dates stopped at the iteration limit",
              file=sys.stderr)
    d = out_dir(args)
    if d is not None:
        D = len(args.assets)
        header = (["t"] + [f"w_{a}" for a in args.assets] + [f"rc_{a}" for a in args.assets]
                  + ["iterations", "spread", "converged", "clamped"])
        write_csv(d / "weights.csv", header,
                  [(int(t), *map(float, s.weights), *map(float, s.rc_forecasts),
                    s.iterations, float(s.spread), int(s.converged), int(s.clamped))
                   for t, s in zip(dates, erc.states)])
        write_csv(d / "losses.csv", ["t", "erc", "ew"],
                  [(int(t), float(a), float(b)) for t, a, b in zip(dates, erc.losses, ew.losses)])
        write_json(d / "metrics.json", {
            "beta": args.beta, "tol": args.tol, "max_iter": args.max_iter,
            "assets": args.assets, "covariates": z_names, "n_dates": int(dates.size),
            "n_converged": int(n_conv), "n_assets": D,
            "erc": erc.metrics.as_dict(), "ew": ew.metrics.as_dict()})
    return EXIT_OK


def _na(v):
    return "NA" if v is None else f"{v:.4f}"


def cmd_mes_oracle(args):
    seed = resolve_seed(args.seed)
    rows = []
    for beta in args.betas:
        value, se = mes_tilde_monte_carlo(beta, draws=args.draws, seed=seed)
        cached = MES_TILDE_TABLE.get((beta, 6.0, PAPER_SIGMA))
        rows.append({"beta": beta, "m_tilde": value, "se": se,
                     "closed_form": mes_tilde(beta),
                     "cached": None if cached is None else cached[0]})
        print(f"beta={beta}: m_tilde={value!r} (se {se:.3g}), closed form {mes_tilde(beta)!r}")
    d = out_dir(args)
    if d is not None:
        write_json(d / "mes_oracle.json", {"df": 6.0, "sigma": PAPER_SIGMA, "draws": args.draws,
                                           "seed": seed, "rows": rows})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="mesreg", description="Regressions for VaR, MES and ES.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, beta_default=None):
        if beta_default is None:
            sp.add_argument("--beta", type=level_type, required=True,
                            help="probability level of the VaR, in (0, 1)")
        else:
            sp.add_argument("--beta", type=level_type, default=beta_default,
                            help=f"probability level (default {beta_default})")
        sp.add_argument("--out", help="directory for result files")

    f = sub.add_parser("fit", help="two-step (VaR, MES) regression with inference")
    f.add_argument("--input", required=True)
    f.add_argument("--y", required=True, help="outcome column")
    f.add_argument("--x", required=True, help="distress column")
    f.add_argument("--zv", type=column_list, required=True,
                   help="VaR covariates; '1' adds an intercept, or 'intercept-only'")
    f.add_argument("--zm", type=column_list, required=True, help="MES covariates")
    f.add_argument("--level", type=level_type, default=0.95, help="confidence level")
    common(f)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="Monte Carlo study of the estimator")
    s.add_argument("--n", type=positive_int, default=2000)
    s.add_argument("--reps", type=positive_int, default=500)
    s.add_argument("--seed", type=seed_type, default=0,
                   help=f"base seed; {SEED_ENV} overrides it when set")
    s.add_argument("--threads", type=positive_int, default=1)
    s.add_argument("--grid", action="store_true",
                   help="run every (beta, n) cell of the full study; ignores --beta and --n")
    common(s)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("brs", help="rolling-window empirical MES regressed on covariates")
    b.add_argument("--input", required=True)
    b.add_argument("--y", required=True)
    b.add_argument("--x", required=True)
    b.add_argument("--zm", type=column_list, required=True)
    b.add_argument("--window", type=positive_int, default=DEFAULT_WINDOW,
                   help=f"window parameter S (default {DEFAULT_WINDOW})")
    common(b)
    b.set_defaults(func=cmd_brs)

    d = sub.add_parser("decompose", help="ES regression of a weighted sum and MES of its parts")
    d.add_argument("--input", required=True)
    d.add_argument("--x", required=True, help="aggregate column")
    d.add_argument("--components", type=column_list, required=True)
    d.add_argument("--weights", type=float_list, help="constant weights (default all 1)")
    d.add_argument("--zv", type=column_list, required=True)
    d.add_argument("--zm", type=column_list, required=True)
    d.add_argument("--level", type=level_type, default=0.95)
    common(d)
    d.set_defaults(func=cmd_decompose)

    e = sub.add_parser("erc", help="equal-risk-contribution backtest against equal weights")
    e.add_argument("--input", required=True)
    e.add_argument("--assets", type=column_list, required=True, help="loss columns")
    e.add_argument("--z", type=column_list, required=True, help="forecast covariates")
    e.add_argument("--start", type=int, help="first forecast row (default: half the sample)")
    e.add_argument("--step", type=positive_int, default=1, help="rows between forecasts")
    e.add_argument("--tol", type=float, default=DEFAULT_TOL)
    e.add_argument("--max-iter", type=positive_int, default=DEFAULT_MAX_ITER)
    common(e, beta_default=0.975)
    e.set_defaults(func=cmd_erc)

    o = sub.add_parser("mes-oracle", help="recompute the Monte Carlo MES constants")
    o.add_argument("--betas", type=float_list, default=[0.9, 0.95, 0.975])
    o.add_argument("--draws", type=positive_int, default=10 ** 7)
    o.add_argument("--seed", type=seed_type, default=20240601)
    o.add_argument("--out")
    o.set_defaults(func=cmd_mes_oracle)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mesreg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LevelError as exc:
        print(f"mesreg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"mesreg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (EstimationError, SimulationError) as exc:
        print(f"mesreg: estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except MesRegError as exc:
        print(f"mesreg: error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
