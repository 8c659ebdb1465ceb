"""Command-line interface: ``wlfrailty fit | simulate | tau | predict``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 convergence failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace

import numpy as np

from .association import kendall_tau_gamma, kendall_tau_ig, kendall_tau_wl
from .em import FitConfig, fit, predict_survival
from .errors import ConvergenceError, DataError, DomainError
from .io import coefficient_table, load_csv, read_result, to_json, write_result
from .simulation import load_scenario, recovery_study

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONVERGENCE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _grid(text):
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError("grid must be T1:T2:N") from None
    if n < 1 or hi < lo or lo < 0:
        raise argparse.ArgumentTypeError("grid needs 0 <= T1 <= T2 and N >= 1")
    return np.linspace(lo, hi, n)


def _positive(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("value must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wlfrailty", description="Shared weighted-Lindley frailty models.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="fit a model to a CSV file")
    f.add_argument("--data", required=True)
    f.add_argument("--time", required=True)
    f.add_argument("--status", required=True)
    f.add_argument("--cluster", required=True)
    f.add_argument("--covars", default=None, help="comma-separated covariate columns")
    f.add_argument("--dist", choices=("np", "weibull"), default="np")
    f.add_argument("--eps", type=_positive, default=1e-6)
    f.add_argument("--max-iter", type=int, default=500)
    f.add_argument("--theta0", type=_positive, default=0.5)
    f.add_argument("--out", default=None)

    s = sub.add_parser("simulate", help="run a recovery study from a scenario file")
    s.add_argument("--scenario", required=True)
    s.add_argument("--reps", type=int, default=None)
    s.add_argument("--fitter", choices=("np", "weibull"), default="np")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", default=None)

    t = sub.add_parser("tau", help="Kendall's tau for a frailty variance")
    t.add_argument("--theta", type=_positive, required=True)
    t.add_argument("--model", choices=("wl", "gamma", "ig", "all"), default="wl")

    r = sub.add_parser("predict", help="survival curves from a saved fit")
    r.add_argument("--fit", required=True)
    r.add_argument("--profile", default="", help="name=value pairs, comma-separated")
    r.add_argument("--mode", choices=("marginal", "conditional"), default="marginal")
    r.add_argument("--z", type=float, default=None)
    r.add_argument("--grid", type=_grid, required=True)
    r.add_argument("--out", default=None)
    return p


def _print_fit(res, out):
    print(f"{'':<12}{'estimate':>12}{'se':>12}{'z':>10}{'p':>10}", file=out)
    for c in coefficient_table(res.covariate_names, res.beta_hat, res.se_beta):
        star = " *" if c.significant else ""
        print(f"{c.name:<12}{c.estimate:>12.5f}{c.se:>12.5f}{c.z:>10.3f}{c.p:>10.4f}{star}", file=out)
    print(f"{'theta':<12}{res.theta_hat:>12.5f}{res.se_theta:>12.5f}", file=out)
    print(f"kendall tau {res.kendall_tau:.5f}  loglik {res.loglik:.4f}  iterations {res.n_iter}", file=out)


def _cmd_fit(args, out):
    covars = [c.strip() for c in args.covars.split(",") if c.strip()] if args.covars else None
    data = load_csv(args.data, args.time, args.status, args.cluster, covars)
    config = FitConfig(
        baseline_kind="weibull" if args.dist == "weibull" else "nonparametric",
        eps=args.eps,
        max_em_iter=args.max_iter,
        theta_init=args.theta0,
    )
    res = fit(data, config)
    if args.out:
        write_result(res, args.out)
    _print_fit(res, out)


def _cmd_simulate(args, out):
    cfg = load_scenario(args.scenario)
    changes = {}
    if args.reps is not None:
        changes["n_replicates"] = args.reps
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if changes:
        cfg = replace(cfg, **changes)
    summary = recovery_study(cfg, args.fitter, workers=args.workers)
    text = to_json(summary.to_dict())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        out.write(text)


def _cmd_tau(args, out):
    models = ("wl", "gamma", "ig") if args.model == "all" else (args.model,)
    fns = {"wl": kendall_tau_wl, "gamma": kendall_tau_gamma, "ig": kendall_tau_ig}
    for name in models:
        print(f"{name:<6}{fns[name](args.theta):.6f}", file=out)


def _parse_profile(text, names):
    values = dict.fromkeys(names, 0.0)
    for part in filter(None, (s.strip() for s in text.split(","))):
        key, sep, val = part.partition("=")
        key = key.strip()
        if not sep:
            raise DataError(f"profile entry {part!r} is not name=value")
        if key not in values:
            raise DataError(f"unknown covariate {key!r}; known: {', '.join(names)}")
        try:
            values[key] = float(val)
        except ValueError:
            raise DataError(f"profile value {val!r} is not a number") from None
    return np.array([values[n] for n in names])


def _cmd_predict(args, out):
    res = read_result(args.fit)
    profile = _parse_profile(args.profile, res.covariate_names)
    curve = predict_survival(res, profile, args.mode, args.grid, args.z)
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else out
    try:
        w = csv.writer(fh)
        w.writerow(["time", "survival"])
        for t, v in zip(curve.grid, curve.values):
            w.writerow([repr(float(t)), repr(float(v))])
    finally:
        if args.out:
            fh.close()


_COMMANDS = {"fit": _cmd_fit, "simulate": _cmd_simulate, "tau": _cmd_tau, "predict": _cmd_predict}


def main(argv=None) -> int:
    out, err = sys.stdout, sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=err)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        _COMMANDS[args.command](args, out)
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=err)
        return EXIT_CONVERGENCE
    except (DataError, DomainError, OSError) as exc:
        print(f"data error: {exc}", file=err)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
