"""Command-line interface: ``hazardlens <subcommand> ...``.

Exit codes: 0 success, 1 verification failure, 2 usage or input error,
3 runtime or numerical error. Every option can also be given through an
environment variable ``HAZARDLENS_<OPTION>`` (dashes become underscores);
command-line flags take precedence.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings

import numpy as np

from . import __version__
from .causal import SensitivityInput, gamma_coupling_sensitivity, parse_sr, sensitivity_sr
from .core import DomainError, EstimationError, SchemaError, read_dataset, write_table
from .estimate import (
    ChangePointCoxFit,
    CoxFit,
    aalen_fit,
    cox_changepoint_fit,
    cox_fit,
    kaplan_meier,
    rmst,
    rmtl_ratio,
    rr_curve,
)
from .frailty import GammaFrailty, MarginalModel, hrz_curve, selection_curve
from .simlab import ConfigError, ExperimentError, load_config, run_experiment, write_svg
from .simlab.config import _parse_frailty, _parse_grid

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3
ENV_PREFIX = "HAZARDLENS_"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _dump_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1, allow_nan=False,
                  default=lambda x: x.item() if isinstance(x, np.generic) else str(x))
        fh.write("\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _emit(args, stem, obj, header=None, columns=None):
    """Write a report as JSON or, with ``--format csv``, as a flat table."""
    path = os.path.join(args.out, f"{stem}.{args.format}")
    if args.format == "json" or header is None:
        path = os.path.join(args.out, f"{stem}.json")
        _dump_json(path, _clean(obj))
    else:
        write_table(path, header, columns)
    return path


def _grid(text):
    try:
        return _parse_grid(text)
    except ValueError as exc:
        raise UsageError(f"bad grid {text!r}; expected start:stop:num ({exc})") from None


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _write_curve(args, name, header, cols, title=""):
    path = os.path.join(args.out, f"{name}.csv")
    write_table(path, header, cols)
    paths = [path]
    if not args.no_svg:
        p = os.path.join(args.out, f"{name}.svg")
        series = {h: (cols[0], c) for h, c in zip(header[1:], cols[1:])}
        try:
            write_svg(p, series, title=title or name)
            paths.append(p)
        except DomainError:
            pass
    return paths


def _load_fit(path):
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    model = d.get("model")
    if model == "cox":
        return CoxFit.from_dict(d)
    if model == "coxcp":
        return ChangePointCoxFit.from_dict(d)
    raise UsageError(f"{path}: expected a cox or coxcp fit JSON, found model={model!r}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args):
    if args.replicates is not None and args.replicates < 1:
        raise UsageError("--replicates must be at least 1")
    overrides = {"seed": args.seed, "replicates": args.replicates, "n": args.n}
    cfg = load_config(args.config, **overrides)
    report = run_experiment(cfg, workers=args.workers)
    paths = report.write(args.out, fmt=args.format, svg=not args.no_svg)
    return paths


def cmd_fit(args):
    data = read_dataset(args.data)
    covs = tuple(c for c in args.covariates.split(",") if c) if args.covariates else ("arm",)
    paths = []
    if args.model == "km":
        arms = [None] + [a for a in (0, 1) if np.any(data.arm == a)]
        report = {}
        for arm in arms:
            km = kaplan_meier(data, arm)
            label = "km" if arm is None else f"km_arm{arm}"
            report[label] = km.to_dict()
            s = km.survival.values[1:]
            half = 1.959963984540054 * np.sqrt(km.variance.values[1:])
            paths += _write_curve(args, label, ["t", "estimate", "lo", "hi"],
                                  [km.times, s, np.clip(s - half, 0, 1), np.clip(s + half, 0, 1)])
        report["model"] = "km"
        paths.append(_emit(args, "fit", report))
        return paths
    if args.model == "cox":
        fit = cox_fit(data, covs)
        paths.append(_emit(args, "fit", fit.to_dict(), ["covariate", "beta", "se"],
                           [list(fit.covariates), fit.beta, fit.se]))
        bh = fit.baseline_cumhaz
        paths += _write_curve(args, "baseline_cumhaz", ["t", "estimate"], [bh.jump_times, bh.values[1:]])
        if args.rr_grid:
            band = rr_curve(fit, _grid(args.rr_grid), n_boot=args.n_boot, seed=args.seed)
            paths += _write_curve(args, "rr", *band.columns(), title="relative risk")
        return paths
    if args.model == "coxcp":
        if args.nu is None:
            raise UsageError("--nu is required for the coxcp model")
        fit = cox_changepoint_fit(data, args.nu)
        paths.append(_emit(args, "fit", fit.to_dict(), ["term", "beta", "se"],
                           [["arm_before", "arm_after"], [fit.beta1, fit.beta2], [fit.se1, fit.se2]]))
        bh = fit.baseline_cumhaz
        paths += _write_curve(args, "baseline_cumhaz", ["t", "estimate"], [bh.jump_times, bh.values[1:]])
        return paths
    if args.model == "aalen":
        fit = aalen_fit(data, covs)
        paths.append(_emit(args, "fit", fit.to_dict()))
        header, cols = ["t"], [fit.times]
        for j, name in enumerate(fit.names):
            lo, hi = fit.band(j)
            header += [name, f"{name}_lo", f"{name}_hi"]
            cols += [fit.cumcoef[:, j], lo, hi]
        write_table(os.path.join(args.out, "aalen_cumcoef.csv"), header, cols)
        paths.append(os.path.join(args.out, "aalen_cumcoef.csv"))
        return paths
    raise UsageError(f"unknown model {args.model!r}")


def cmd_curves(args):
    tgrid = _grid(args.tgrid)
    frailty = GammaFrailty(args.theta) if args.theta is not None else None
    if args.frailty:
        try:
            frailty = _parse_frailty(args.frailty)
        except (ValueError, DomainError) as exc:
            raise UsageError(f"bad --frailty: {exc}") from None
    if frailty is None:
        raise UsageError("give --frailty or --theta")
    if args.fit:
        fit = _load_fit(args.fit)
        m = MarginalModel.from_fit(fit)
        end = fit.baseline_cumhaz.domain_end
        if end is not None:
            tgrid = tgrid[tgrid <= end]
    else:
        if args.beta1 is None:
            raise UsageError("give --fit or --beta1")
        beta2 = args.beta2 if args.beta2 is not None else args.beta1
        m = MarginalModel(args.beta1, beta2, args.nu if args.nu is not None else math.inf, args.lambda0)
    if args.kind == "hrz":
        header, cols = ["t", "value"], [tgrid, hrz_curve(m, frailty, tgrid)]
    else:
        s0, s1 = selection_curve(m, frailty, 0, tgrid), selection_curve(m, frailty, 1, tgrid)
        header, cols = ["t", "arm0", "arm1", "ratio"], [tgrid, s0, s1, s1 / s0]
    return _write_curve(args, args.kind, header, cols)


def cmd_sensitivity(args):
    if (args.tau is None) == (args.sr is None):
        raise UsageError("give exactly one of --tau and --sr")
    if args.fit and args.data:
        raise UsageError("give at most one of --fit and --data")
    tgrid = _grid(args.tgrid)
    fit = data = None
    if args.fit:
        fit = _load_fit(args.fit)
        if not isinstance(fit, CoxFit):
            raise UsageError("sensitivity needs a cox fit")
    elif args.data:
        data = read_dataset(args.data)
        fit = cox_fit(data)
    if args.tau is not None:
        if fit is None:
            raise UsageError("--tau needs --fit or --data")
        end = fit.baseline_cumhaz.domain_end
        if end is not None:
            tgrid = tgrid[tgrid <= end]
        curves = gamma_coupling_sensitivity(fit, _floats(args.tau), tgrid)
        header = ["t", *(f"tau={tau:g}" for tau in curves)]
        return _write_curve(args, "sensitivity", header, [tgrid, *curves.values()], "causal hazard ratio")
    sr = parse_sr(args.sr)
    if args.obs_hr is not None:
        obs = args.obs_hr
    elif fit is not None:
        obs = math.exp(fit.coef("arm"))
    else:
        raise UsageError("--sr needs --obs-hr, --fit or --data")
    if args.pi is not None:
        surv0, surv1 = args.pi, 1.0
    elif data is not None:
        surv0, surv1 = kaplan_meier(data, 0), kaplan_meier(data, 1)
        tgrid = tgrid[tgrid <= min(surv0.last_time, surv1.last_time)]
    elif fit is not None:
        L0, b = fit.baseline_cumhaz, fit.coef("arm")
        surv0 = lambda t: np.exp(-L0(t))
        surv1 = lambda t: np.exp(-L0(t) * math.exp(b))
    else:
        raise UsageError("--sr needs --pi, --fit or --data")
    res = sensitivity_sr(SensitivityInput(obs, surv0, surv1, sr), tgrid)
    paths = _write_curve(args, "sensitivity", *res.columns(), "causal hazard ratio")
    if res.failed.any():
        raise EstimationError(f"zero denominator at t = {res.times[res.failed].tolist()}")
    return paths


def cmd_rmst(args):
    data = read_dataset(args.data)
    res = {arm: rmst(kaplan_meier(data, arm), args.horizon) for arm in (0, 1)}
    ratio, lo, hi = rmtl_ratio(res[1], res[0], args.level)
    report = {"horizon": args.horizon, "level": args.level,
              "rmtl_ratio": {"estimate": ratio, "lo": lo, "hi": hi}}
    for arm, r in res.items():
        report[f"arm{arm}"] = {"rmst": r.rmst, "rmtl": r.rmtl, "se": r.se}
    header = ["quantity", "estimate", "se", "lo", "hi"]
    cols = [["rmst0", "rmtl0", "rmst1", "rmtl1", "rmtl_ratio"],
            [res[0].rmst, res[0].rmtl, res[1].rmst, res[1].rmtl, ratio],
            [res[0].se, res[0].se, res[1].se, res[1].se, float("nan")],
            [float("nan")] * 4 + [lo], [float("nan")] * 4 + [hi]]
    return [_emit(args, "rmst", report, header, cols)]


def cmd_verify(args):
    from .verify import run_checks

    only = [s.strip() for s in args.only.split(",") if s.strip()] if args.only else None
    try:
        results = run_checks(only, args.tolerance_scale, args.seed)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  error={r.error:.3g}  "
              f"tol={r.tolerance:.3g}  {r.seconds:.1f}s  {r.detail}")
    write_table(os.path.join(args.out, "verify.csv"), ["check", "passed", "error", "tolerance", "detail"],
                [[r.name for r in results], [int(r.passed) for r in results],
                 [r.error for r in results], [r.tolerance for r in results], [r.detail for r in results]])
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _env_defaults(parser):
    for action in parser._actions:
        if not action.option_strings or action.dest in ("help", "version"):
            continue
        value = os.environ.get(ENV_PREFIX + action.dest.upper())
        if value is None:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            action.default = value.strip().lower() not in ("", "0", "false", "no")
        else:
            # argparse applies ``type`` to string defaults
            action.default = value
            action.required = False


def build_parser():
    p = argparse.ArgumentParser(prog="hazardlens", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hazardlens {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, fmt=True):
        sp.add_argument("--out", default=".", help="output directory (created if missing)")
        sp.add_argument("--seed", type=int, default=None, help="master seed")
        sp.add_argument("--no-svg", action="store_true", help="skip SVG plots")
        if fmt:
            sp.add_argument("--format", choices=("json", "csv"), default="json", help="report style")

    sp = sub.add_parser("simulate", help="run a bundled or custom experiment configuration")
    sp.add_argument("--config", required=True, help="bundled config name or path to a .cfg file")
    sp.add_argument("--replicates", type=int, default=None)
    sp.add_argument("--n", type=int, default=None, help="override the sample size")
    sp.add_argument("--workers", type=int, default=None)
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="fit km, cox, coxcp or aalen to a dataset CSV")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True, choices=("km", "cox", "coxcp", "aalen"))
    sp.add_argument("--nu", type=float, default=None, help="change point for coxcp")
    sp.add_argument("--covariates", default=None, help="comma-separated covariate names (default: arm)")
    sp.add_argument("--rr-grid", default=None, help="start:stop:num grid for the relative risk curve")
    sp.add_argument("--n-boot", type=int, default=1000)
    common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("curves", help="conditional HR or survivor frailty-mean curves")
    sp.add_argument("--kind", choices=("hrz", "selection"), default="hrz")
    sp.add_argument("--fit", default=None, help="cox or coxcp fit JSON from 'fit'")
    sp.add_argument("--beta1", type=float, default=None)
    sp.add_argument("--beta2", type=float, default=None)
    sp.add_argument("--nu", type=float, default=None)
    sp.add_argument("--lambda0", type=float, default=1.0)
    sp.add_argument("--frailty", default=None, help="gamma:<theta> or discrete:<z>@<p>,...")
    sp.add_argument("--theta", type=float, default=None, help="Gamma frailty variance")
    sp.add_argument("--tgrid", default="0:8:81")
    common(sp, fmt=False)
    sp.set_defaults(func=cmd_curves)

    sp = sub.add_parser("sensitivity", help="causal HR by Gamma coupling (--tau) or sensitivity ratio (--sr)")
    sp.add_argument("--fit", default=None)
    sp.add_argument("--data", default=None)
    sp.add_argument("--tau", default=None, help="comma-separated Kendall's tau values")
    sp.add_argument("--sr", default=None, help="const:<v>, piecewise:<t>=<v>,... or a t,sr CSV")
    sp.add_argument("--obs-hr", type=float, default=None, help="constant observed hazard ratio")
    sp.add_argument("--pi", type=float, default=None, help="constant S0/S1")
    sp.add_argument("--tgrid", default="0:5:51")
    common(sp, fmt=False)
    sp.set_defaults(func=cmd_sensitivity)

    sp = sub.add_parser("rmst", help="restricted mean survival and lost time by arm")
    sp.add_argument("--data", required=True)
    sp.add_argument("--horizon", type=float, required=True)
    sp.add_argument("--level", type=float, default=0.95)
    common(sp)
    sp.set_defaults(func=cmd_rmst)

    sp = sub.add_parser("verify", help="run the oracle cross-check suite")
    sp.add_argument("--only", default=None, help="comma-separated check names")
    sp.add_argument("--tolerance-scale", type=float, default=1.0)
    common(sp, fmt=False)
    sp.set_defaults(func=cmd_verify)

    for action in sub.choices.values():
        _env_defaults(action)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", None) is None and args.command != "simulate":
        args.seed = 0
    try:
        os.makedirs(args.out, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            result = args.func(args)
        if isinstance(result, int):
            return result
        for path in result or ():
            print(path)
        return EXIT_OK
    except (UsageError, ConfigError, SchemaError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"hazardlens: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as exc:
        print(f"hazardlens: error: {exc}", file=sys.stderr)
        return EXIT_USAGE if args.command in ("curves", "sensitivity", "rmst") else EXIT_RUNTIME
    except (EstimationError, ExperimentError, FloatingPointError, np.linalg.LinAlgError, OverflowError) as exc:
        print(f"hazardlens: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
