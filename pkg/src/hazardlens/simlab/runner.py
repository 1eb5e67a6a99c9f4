"""Run configured experiments and collect deterministic reports."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..causal import (
    AdditiveHazard,
    GammaShared,
    SharedAdditive,
    TwoLevel,
    causal_hr_closed,
    causal_hr_mc,
    gamma_coupling_sensitivity,
    gen_coupled,
    kendall_tau,
    tau_from_theta,
    theta_from_tau,
)
from ..core import DomainError, EstimationError, SeedSpec, SurvivalData, write_dataset, write_table
from ..estimate import (
    aalen_fit,
    constant_effect,
    cox_changepoint_fit,
    cox_fit,
    kaplan_meier,
    rmst,
    rmtl_ratio,
    rr_curve,
)
from ..frailty import GammaFrailty, MarginalModel, conditional_hazard_dgp, hrz_curve, selection_curve
from .censoring import apply_censoring
from .config import ConfigError, ExperimentConfig
from .figures import calibrate_fig9_baseline, fig9_curve, write_svg

__all__ = ["ESTIMATORS", "ExperimentError", "ExperimentReport", "run_experiment", "build_dgp"]

Z95 = stats.norm.ppf(0.975)


class ExperimentError(RuntimeError):
    """Every replicate failed."""


# ---------------------------------------------------------------------------
# DGP construction
# ---------------------------------------------------------------------------


def _need(cfg, key, default=None):
    if key in cfg.params:
        return cfg.params[key]
    if default is None:
        raise ConfigError(f"dgp {cfg.dgp!r} needs key {key!r}", source=cfg.name)
    return default


def build_dgp(cfg: ExperimentConfig):
    """Return ``(sampler, truth)``; ``sampler(rng, n)`` yields potential outcomes."""
    if cfg.dgp == "changepoint":
        m = MarginalModel(_need(cfg, "beta1"), _need(cfg, "beta2", 0.0), _need(cfg, "nu", math.inf),
                          _need(cfg, "lambda0", 1.0))
        f = cfg.frailty if cfg.frailty is not None else GammaFrailty(0.0)
        truth = {"coxcp.beta1": m.beta1, "coxcp.beta2": m.beta2}
        if math.isinf(m.nu):
            truth["cox.beta"] = m.beta1
        return (lambda rng, n: conditional_hazard_dgp(m, f, n, rng)), truth
    if cfg.dgp == "gamma_shared":
        spec = GammaShared(_need(cfg, "beta"), _need(cfg, "theta"))
        truth = {"cox.beta": spec.beta, "kendall.tau": tau_from_theta(spec.theta)}
    elif cfg.dgp == "two_level":
        spec = TwoLevel(_need(cfg, "beta"), _need(cfg, "lambda0", 1.0), _need(cfg, "theta2", 1.0))
        truth = {"cox.beta": spec.beta}
    elif cfg.dgp == "shared_additive":
        spec = SharedAdditive(_need(cfg, "alpha"), _need(cfg, "beta"))
        truth = {}
    elif cfg.dgp == "additive":
        spec = AdditiveHazard.linear(_need(cfg, "psi"), cfg.frailty)
        truth = {}
    else:
        return None, {}
    return (lambda rng, n: gen_coupled(spec, n, rng)), truth


def _marginal_model(cfg):
    if cfg.dgp != "changepoint":
        raise ConfigError("this estimator needs dgp = changepoint", source=cfg.name)
    m = MarginalModel(_need(cfg, "beta1"), _need(cfg, "beta2", 0.0), _need(cfg, "nu", math.inf),
                      _need(cfg, "lambda0", 1.0))
    return m, (cfg.frailty if cfg.frailty is not None else GammaFrailty(0.0))


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


@dataclass
class _Context:
    cfg: ExperimentConfig
    index: int
    outcomes: object
    data: SurvivalData
    seed: int
    cache: dict = field(default_factory=dict)

    def cox(self):
        if "cox" not in self.cache:
            self.cache["cox"] = cox_fit(self.data)
        return self.cache["cox"]

    def coxcp(self):
        if "coxcp" not in self.cache:
            self.cache["coxcp"] = cox_changepoint_fit(self.data, _need(self.cfg, "nu"))
        return self.cache["coxcp"]


def _est_cox(ctx):
    fit = ctx.cox()
    return {"cox.beta": fit.coef("arm"), "cox.se": float(fit.se[0]), "cox.n_iter": fit.n_iter}, {}


def _est_coxcp(ctx):
    fit = ctx.coxcp()
    scalars = {
        "coxcp.beta1": fit.beta1, "coxcp.se1": fit.se1, "coxcp.beta2": fit.beta2, "coxcp.se2": fit.se2,
        "coxcp.n_events_before": fit.n_events_before, "coxcp.n_events_after": fit.n_events_after,
    }
    return scalars, {}


def _aalen_windows(cfg, af):
    if cfg.windows:
        return cfg.windows
    end = float(af.times[-1])
    nu = cfg.params.get("nu", math.inf)
    if math.isfinite(nu) and nu < end:
        return ((0.0, nu), (nu, end))
    return ((0.0, end),)


def _est_aalen(ctx):
    af = aalen_fit(ctx.data)
    scalars = {}
    for i, w in enumerate(_aalen_windows(ctx.cfg, af)):
        ce = constant_effect(af, "arm", window=w, n_resample=1000, seed=ctx.seed + i)
        scalars[f"aalen.slope{i}"] = ce.psi
        scalars[f"aalen.slope{i}_se"] = ce.se
        scalars[f"aalen.slope{i}_p_constant"] = ce.p_value
    lo, hi = af.band("arm")
    j = af.column_index("arm")
    curves = {"aalen_arm": (["t", "estimate", "lo", "hi"], [af.times, af.cumcoef[:, j], lo, hi])}
    return scalars, curves


def _est_km(ctx):
    curves = {}
    for arm in (0, 1):
        km = kaplan_meier(ctx.data, arm)
        s = km.survival.values[1:]
        half = Z95 * np.sqrt(km.variance.values[1:])
        curves[f"km_arm{arm}"] = (["t", "estimate", "lo", "hi"],
                                  [km.times, s, np.clip(s - half, 0, 1), np.clip(s + half, 0, 1)])
    return {}, curves


def _est_rmst(ctx):
    horizon = _need(ctx.cfg, "horizon")
    res = [rmst(kaplan_meier(ctx.data, arm), horizon) for arm in (0, 1)]
    ratio, lo, hi = rmtl_ratio(res[1], res[0])
    scalars = {}
    for arm in (0, 1):
        scalars[f"rmst.rmst{arm}"] = res[arm].rmst
        scalars[f"rmst.rmtl{arm}"] = res[arm].rmtl
        scalars[f"rmst.se{arm}"] = res[arm].se
    scalars.update({"rmst.rmtl_ratio": ratio, "rmst.ratio_lo": lo, "rmst.ratio_hi": hi})
    return scalars, {}


def _est_hrz_fit(ctx):
    fit = ctx.coxcp()
    _, f = _marginal_model(ctx.cfg)
    m = MarginalModel.from_fit(fit)
    t = ctx.cfg.tgrid[ctx.cfg.tgrid <= fit.baseline_cumhaz.domain_end]
    return {}, {"hrz_fit": (["t", "value"], [t, hrz_curve(m, f, t)])}


def _est_selection_mc(ctx):
    o = ctx.outcomes
    t_obs, a, z = o.t_obs, np.asarray(o.a), np.asarray(o.z)
    cols = [ctx.cfg.tgrid]
    for arm in (0, 1):
        mean, se = [], []
        for t in ctx.cfg.tgrid:
            zz = z[(a == arm) & (t_obs > t)]
            mean.append(zz.mean() if zz.size else np.nan)
            se.append(zz.std(ddof=1) / math.sqrt(zz.size) if zz.size > 1 else np.nan)
        cols += [np.array(mean), np.array(se)]
    return {}, {"selection_mc": (["t", "arm0", "se0", "arm1", "se1"], cols)}


def _est_causal_mc(ctx):
    curve = causal_hr_mc(ctx.outcomes, ctx.cfg.tgrid, ctx.cfg.params.get("bandwidth"))
    scalars = {"causal_mc.bandwidth": curve.bandwidth}
    if ctx.cfg.dgp == "gamma_shared":
        truth = causal_hr_closed(_need(ctx.cfg, "beta"), _need(ctx.cfg, "theta"), curve.times)
        scalars["causal_mc.max_abs_z"] = float(np.nanmax(np.abs((curve.estimate - truth) / curve.se)))
    return scalars, {"causal_mc": curve.columns()}


def _est_kendall(ctx):
    return {"kendall.tau": kendall_tau(ctx.outcomes)}, {}


def _est_gamma_sens(ctx):
    fit = ctx.cox()
    t = ctx.cfg.tgrid[ctx.cfg.tgrid <= fit.baseline_cumhaz.domain_end]
    taus = ctx.cfg.taus or (0.1, 0.2, 0.3)
    curves = gamma_coupling_sensitivity(fit, taus, t)
    return {}, {"gamma_sens": (["t", *(f"tau={tau:g}" for tau in curves)], [t, *curves.values()])}


def _est_rr(ctx):
    fit = ctx.cox()
    t = ctx.cfg.tgrid[ctx.cfg.tgrid <= fit.baseline_cumhaz.domain_end]
    band = rr_curve(fit, t, n_boot=int(ctx.cfg.params.get("n_boot", 200)), seed=ctx.seed)
    return {}, {"rr": band.columns()}


# analytic estimators depend only on the configuration


def _an_hrz(cfg):
    m, f = _marginal_model(cfg)
    hr = hrz_curve(m, f, cfg.tgrid)
    cols = [cfg.tgrid, hr]
    header = ["t", "value"]
    if isinstance(f, GammaFrailty):
        header.append("value_g_route")
        cols.append(hrz_curve(m, f, cfg.tgrid, route="g"))
    return {"hrz.min": float(hr.min()), "hrz.max": float(hr.max())}, {"hrz": (header, cols)}


def _an_selection(cfg):
    m, f = _marginal_model(cfg)
    s0 = selection_curve(m, f, 0, cfg.tgrid)
    s1 = selection_curve(m, f, 1, cfg.tgrid)
    return {}, {"selection": (["t", "arm0", "arm1", "ratio"], [cfg.tgrid, s0, s1, s1 / s0])}


def _an_causal_closed(cfg):
    beta = _need(cfg, "beta")
    taus = cfg.taus or (0.0,)
    cols = [causal_hr_closed(beta, theta_from_tau(tau), cfg.tgrid) for tau in taus]
    return {}, {"causal_closed": (["t", *(f"tau={tau:g}" for tau in taus)], [cfg.tgrid, *cols])}


def _an_fig9(cfg):
    b1, b2, nu = _need(cfg, "beta1"), _need(cfg, "beta2"), _need(cfg, "nu")
    taus = cfg.taus or (0.3,)
    target = cfg.params.get("fig9_target", 3.7)
    rate = cfg.params.get("lambda0") or calibrate_fig9_baseline(b1, nu, max(taus), target)
    cols = [fig9_curve(b1, b2, nu, rate, tau, cfg.tgrid) for tau in taus]
    return {"fig9.baseline_rate": rate}, {"fig9": (["t", *(f"tau={tau:g}" for tau in taus)], [cfg.tgrid, *cols])}


ESTIMATORS = {
    "cox": _est_cox,
    "coxcp": _est_coxcp,
    "aalen": _est_aalen,
    "km": _est_km,
    "rmst": _est_rmst,
    "hrz_fit": _est_hrz_fit,
    "selection_mc": _est_selection_mc,
    "causal_mc": _est_causal_mc,
    "kendall": _est_kendall,
    "gamma_sens": _est_gamma_sens,
    "rr": _est_rr,
    "hrz": _an_hrz,
    "selection": _an_selection,
    "causal_closed": _an_causal_closed,
    "fig9": _an_fig9,
}
ANALYTIC = {"hrz", "selection", "causal_closed", "fig9"}
NEEDS_OUTCOMES = {"selection_mc", "causal_mc", "kendall"}


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.integer, bool, np.bool_)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


@dataclass(eq=False)
class ExperimentReport:
    config: ExperimentConfig
    analytic: dict
    replicates: list
    aggregates: dict
    curves: dict
    dataset: SurvivalData | None = None
    dataset_extra: dict | None = None

    def to_dict(self):
        return _clean({
            "name": self.config.name,
            "config": self.config.echo,
            "seed": self.config.seed,
            "n_replicates": self.config.replicates,
            "analytic": self.analytic,
            "replicates": self.replicates,
            "aggregates": self.aggregates,
            "curves": sorted(self.curves),
        })

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def aggregate_rows(self):
        header = ["key", "mean", "sd", "n", "truth", "coverage"]
        rows = []
        for key, agg in sorted(self.aggregates.items()):
            rows.append([key, *(agg.get(c, "") for c in header[1:])])
        return header, rows

    def write(self, out_dir, fmt="json", svg=True):
        """Write the report, curve CSVs, the first replicate's dataset and plots."""
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        if fmt == "json":
            p = os.path.join(out_dir, "report.json")
            with open(p, "w", encoding="utf-8") as fh:
                fh.write(self.to_json())
        else:
            p = os.path.join(out_dir, "report.csv")
            header, rows = self.aggregate_rows()
            write_table(p, header, [np.array([r[i] for r in rows], dtype=object) for i in range(len(header))])
        paths.append(p)
        for name, (header, cols) in sorted(self.curves.items()):
            p = os.path.join(out_dir, f"{name}.csv")
            write_table(p, header, cols)
            paths.append(p)
            if svg:
                series = {h: (cols[0], c) for h, c in zip(header[1:], cols[1:])
                          if not h.startswith("se") and h not in ("n_stratum", "flagged")}
                p = os.path.join(out_dir, f"{name}.svg")
                try:
                    write_svg(p, series, title=f"{self.config.name}: {name}", ylabel=name)
                    paths.append(p)
                except DomainError:
                    pass
        if self.dataset is not None:
            p = os.path.join(out_dir, "dataset.csv")
            write_dataset(p, self.dataset, self.dataset_extra)
            paths.append(p)
        return paths


def _replicate(cfg, sampler, r):
    ss = SeedSpec(cfg.seed, r)
    outcomes = data = None
    record = {"index": r}
    curves = {}
    try:
        if sampler is not None:
            outcomes = sampler(ss.rng(0), cfg.n)
            data = apply_censoring(outcomes, cfg.censoring, ss.rng(1))
            record["censoring_fraction"] = float(1 - data.status.mean())
        ctx = _Context(cfg, r, outcomes, data, int(ss.rng(2).integers(0, 2**31)))
        scalars = {}
        for name in cfg.estimators:
            if name in ANALYTIC:
                continue
            if data is None:
                raise ConfigError(f"estimator {name!r} needs a dgp", source=cfg.name)
            s, c = ESTIMATORS[name](ctx)
            scalars.update(s)
            curves.update(c)
        record["scalars"] = scalars
    except (EstimationError, DomainError, FloatingPointError, np.linalg.LinAlgError) as exc:
        record["error"] = f"{type(exc).__name__}: {exc}"
    return record, curves, outcomes, data


def _aggregate(records, truth):
    ok = [r for r in records if "error" not in r]
    keys = sorted({k for r in ok for k in r.get("scalars", {})} | ({"censoring_fraction"} if ok and "censoring_fraction" in ok[0] else set()))
    out = {}
    for key in keys:
        vals = np.array([r["scalars"][key] if key in r.get("scalars", {}) else r.get(key, np.nan) for r in ok], dtype=float)
        vals = vals[np.isfinite(vals)]
        if vals.size == 0:
            continue
        agg = {"mean": float(vals.mean()), "sd": float(vals.std(ddof=1)) if vals.size > 1 else 0.0, "n": int(vals.size)}
        if key in truth:
            agg["truth"] = float(truth[key])
            se_key = {"coxcp.beta1": "coxcp.se1", "coxcp.beta2": "coxcp.se2", "cox.beta": "cox.se"}.get(key)
            if se_key:
                cover = [abs(r["scalars"][key] - truth[key]) <= Z95 * r["scalars"][se_key]
                         for r in ok if key in r["scalars"] and se_key in r["scalars"]]
                if cover:
                    agg["coverage"] = float(np.mean(cover))
        out[key] = agg
    return out


def run_experiment(cfg: ExperimentConfig, workers=None) -> ExperimentReport:
    """Run every replicate of ``cfg`` and aggregate.

    Replicate ``r`` draws its data, censoring and estimator randomness from
    ``SeedSpec(cfg.seed, r)``, so the report is identical for any number of
    workers. A failing replicate is recorded and skipped; the run fails
    only if all replicates fail.
    """
    sampler, truth = build_dgp(cfg)
    analytic, curves = {}, {}
    for name in cfg.estimators:
        if name in ANALYTIC:
            s, c = ESTIMATORS[name](cfg)
            analytic.update(s)
            curves.update(c)
    if any(e in NEEDS_OUTCOMES for e in cfg.estimators) and sampler is None:
        raise ConfigError("estimators need a dgp", source=cfg.name)

    workers = cfg.workers if workers is None else workers
    run_dgp = sampler is not None
    if run_dgp:
        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                results = list(ex.map(lambda r: _replicate(cfg, sampler, r), range(cfg.replicates)))
        else:
            results = [_replicate(cfg, sampler, r) for r in range(cfg.replicates)]
        records = [res[0] for res in results]
        if all("error" in r for r in records):
            raise ExperimentError(f"all {len(records)} replicates failed; first: {records[0]['error']}")
        first = next(res for res in results if "error" not in res[0])
        curves.update(first[1])
        outcomes, dataset = first[2], first[3]
        names, z = outcomes.z_columns()
        extra = {name: z[:, j] for j, name in enumerate(names)}
        extra.update(t0=np.asarray(outcomes.t0), t1=np.asarray(outcomes.t1))
    else:
        records, dataset, extra = [], None, None
    return ExperimentReport(cfg, analytic, records, _aggregate(records, truth), curves, dataset, extra)
