"""Classical survival estimators.

Kaplan-Meier, Nelson-Aalen, Cox partial likelihood (Breslow ties) with the
Breslow baseline, the two-period change-point Cox model, Aalen's additive
hazards model, RMST/RMTL and the model-based relative-risk curve.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels
from .core import DomainError, EstimationError, SeedSpec, StepFunction, SurvivalData, as_data

__all__ = [
    "ConvergenceError",
    "SeparationError",
    "NonIdentifiedError",
    "KaplanMeier",
    "kaplan_meier",
    "NelsonAalen",
    "nelson_aalen",
    "CoxFit",
    "cox_fit",
    "ChangePointCoxFit",
    "cox_changepoint_fit",
    "AalenFit",
    "aalen_fit",
    "ConstantEffect",
    "constant_effect",
    "RMSTResult",
    "rmst",
    "rmtl_ratio",
    "BandedCurve",
    "rr_curve",
    "relative_risk",
    "log_survival_ratio",
]


class ConvergenceError(EstimationError):
    """Newton iteration did not converge; ``last_beta`` holds the final iterate."""

    def __init__(self, message, last_beta=None):
        super().__init__(message)
        self.last_beta = last_beta


class SeparationError(EstimationError):
    """The partial likelihood is monotone or flat in some direction."""


class NonIdentifiedError(EstimationError):
    """A coefficient has no information in the data.

    ``partial_fit`` carries the fit of the identified coefficients.
    """

    def __init__(self, message, partial_fit=None):
        super().__init__(message)
        self.partial_fit = partial_fit


def _arm_subset(data, arm):
    data = as_data(data)
    if arm is not None:
        data = data.subset(data.arm == arm)
    if len(data) == 0:
        raise EstimationError("no subjects after arm filtering")
    return data


def _event_table(time, status):
    """Distinct event times with events and numbers at risk."""
    ev_t, d = np.unique(time[status == 1], return_counts=True)
    sorted_t = np.sort(time)
    at_risk = time.shape[0] - np.searchsorted(sorted_t, ev_t, side="left")
    return ev_t, d.astype(float), at_risk.astype(float)


# ---------------------------------------------------------------------------
# Kaplan-Meier / Nelson-Aalen
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KaplanMeier:
    times: np.ndarray
    n_at_risk: np.ndarray
    n_events: np.ndarray
    survival: StepFunction
    variance: StepFunction
    last_time: float

    def __call__(self, t):
        return self.survival(t)

    def to_dict(self):
        return {
            "model": "km",
            "times": self.times.tolist(),
            "survival": self.survival.values[1:].tolist(),
            "variance": self.variance.values[1:].tolist(),
            "n_at_risk": self.n_at_risk.tolist(),
            "n_events": self.n_events.tolist(),
            "last_time": self.last_time,
        }


def kaplan_meier(data, arm=None) -> KaplanMeier:
    """Product-limit survival estimate with Greenwood variance.

    Parameters
    ----------
    data : SurvivalData or sequence of SurvivalSample
    arm : {0, 1}, optional
        Restrict to one treatment arm.

    Returns
    -------
    KaplanMeier
        Survival and variance are step functions jumping at event times,
        defined up to the last observed (event or censoring) time.
    """
    data = _arm_subset(data, arm)
    ev_t, d, n = _event_table(data.time, data.status)
    surv = np.cumprod(1.0 - d / n)
    with np.errstate(divide="ignore", invalid="ignore"):
        gw = np.cumsum(np.where(n > d, d / (n * (n - d)), np.inf))
        var = np.where(surv > 0, surv**2 * gw, 0.0)
    end = float(data.time.max())
    return KaplanMeier(
        ev_t, n, d,
        StepFunction(ev_t, np.concatenate(([1.0], surv)), end),
        StepFunction(ev_t, np.concatenate(([0.0], var)), end),
        end,
    )


@dataclass(frozen=True, eq=False)
class NelsonAalen:
    times: np.ndarray
    cumhaz: StepFunction
    variance: StepFunction

    def __call__(self, t):
        return self.cumhaz(t)


def nelson_aalen(data, arm=None) -> NelsonAalen:
    data = _arm_subset(data, arm)
    ev_t, d, n = _event_table(data.time, data.status)
    end = float(data.time.max())
    return NelsonAalen(
        ev_t,
        StepFunction(ev_t, np.concatenate(([0.0], np.cumsum(d / n))), end),
        StepFunction(ev_t, np.concatenate(([0.0], np.cumsum(d / n**2))), end),
    )


# ---------------------------------------------------------------------------
# Cox partial likelihood
# ---------------------------------------------------------------------------

MAX_ITER = 50
REL_LOGLIK_TOL = 1e-9
SCORE_TOL = 1e-6
# |beta| beyond this is treated as divergence to infinity
BETA_BOUND = 30.0
# information this far below its value at beta = 0 signals a monotone likelihood
INFO_COLLAPSE = 1e-6


def _partial_likelihood(beta, stop, X, ev_t, X_ev, start):
    eta = X @ beta
    shift = eta.max() if eta.size else 0.0
    w = np.exp(eta - shift)
    s0, s1, s2 = _kernels.risk_set_sums(ev_t, stop, w, X, start)
    if np.any(s0 <= 0):
        raise EstimationError("empty risk set at an event time")
    xbar = s1 / s0[:, None]
    loglik = float(np.sum(X_ev @ beta) - np.sum(np.log(s0) + shift))
    score = np.sum(X_ev - xbar, axis=0)
    info = np.sum(s2 / s0[:, None, None] - xbar[:, :, None] * xbar[:, None, :], axis=0)
    return loglik, score, info, s0, shift


def _newton(stop, event, X, start=None, max_iter=MAX_ITER):
    """Maximise the Breslow partial likelihood from beta = 0 with step halving."""
    event = event.astype(bool)
    if not event.any():
        raise EstimationError("no events")
    order = np.argsort(stop[event], kind="stable")
    ev_t = stop[event][order]
    X_ev = X[event][order]
    p = X.shape[1]
    beta = np.zeros(p)
    ll, score, info, s0, shift = _partial_likelihood(beta, stop, X, ev_t, X_ev, start)
    info0 = np.linalg.eigvalsh(info)[0]
    for it in range(1, max_iter + 1):
        eig = np.linalg.eigvalsh(info)
        if eig[0] <= 1e-10 * max(eig[-1], 1.0):
            raise SeparationError(
                "observed information is singular: a covariate is constant within "
                "risk sets or the likelihood is monotone"
            )
        step = np.linalg.solve(info, score)
        for _ in range(40):
            cand = beta + step
            ll_new, sc_new, info_new, s0_new, sh_new = _partial_likelihood(
                cand, stop, X, ev_t, X_ev, start
            )
            if ll_new >= ll - 1e-12 * abs(ll):
                break
            step = step / 2
        else:
            raise ConvergenceError("step halving failed to increase the likelihood", beta)
        rel = abs(ll_new - ll) / max(abs(ll), 1e-300)
        beta, ll, score, info, s0, shift = cand, ll_new, sc_new, info_new, s0_new, sh_new
        if np.max(np.abs(beta)) > BETA_BOUND:
            raise SeparationError(
                f"coefficients diverge (|beta| > {BETA_BOUND}); monotone likelihood"
            )
        if rel < REL_LOGLIK_TOL and np.max(np.abs(score)) < SCORE_TOL:
            # the score also vanishes far out along a monotone likelihood
            if np.linalg.eigvalsh(info)[0] < INFO_COLLAPSE * info0:
                raise SeparationError("information collapsed at the optimum; monotone likelihood")
            return beta, ll, score, info, ev_t, s0, shift, it
    raise ConvergenceError(f"no convergence in {max_iter} iterations", beta)


def _breslow(ev_t, s0, shift, end):
    # tied events share one risk-set sum, so group before dividing
    uniq, first, d = np.unique(ev_t, return_index=True, return_counts=True)
    inc = d / (s0[first] * np.exp(shift))
    return StepFunction(uniq, np.concatenate(([0.0], np.cumsum(inc))), end)


@dataclass(frozen=True, eq=False)
class CoxFit:
    """Cox regression fit.

    ``baseline_cumhaz`` is the Breslow estimate at covariate value zero.
    """

    beta: np.ndarray
    se: np.ndarray
    baseline_cumhaz: StepFunction
    loglik: float
    n_iter: int
    covariates: tuple = ("arm",)
    score: np.ndarray = None
    information: np.ndarray = None
    n: int = 0
    n_events: int = 0
    data: SurvivalData = field(default=None, repr=False)

    def coef(self, name="arm"):
        return float(self.beta[self.covariates.index(name)])

    def to_dict(self):
        return {
            "model": "cox",
            "covariates": list(self.covariates),
            "beta": self.beta.tolist(),
            "se": self.se.tolist(),
            "hazard_ratio": np.exp(self.beta).tolist(),
            "loglik": self.loglik,
            "n_iter": self.n_iter,
            "score_max_abs": float(np.max(np.abs(self.score))),
            "n": self.n,
            "n_events": self.n_events,
            "baseline_cumhaz": {
                "times": self.baseline_cumhaz.jump_times.tolist(),
                "values": self.baseline_cumhaz.values[1:].tolist(),
                "domain_end": self.baseline_cumhaz.domain_end,
            },
        }

    @classmethod
    def from_dict(cls, d):
        """Rebuild a fit from :meth:`to_dict` output (without the data)."""
        bh = d["baseline_cumhaz"]
        return cls(
            beta=np.asarray(d["beta"], dtype=float),
            se=np.asarray(d["se"], dtype=float),
            baseline_cumhaz=StepFunction(bh["times"], [0.0, *bh["values"]], bh.get("domain_end")),
            loglik=d["loglik"],
            n_iter=d["n_iter"],
            covariates=tuple(d["covariates"]),
            score=np.zeros(len(d["beta"])),
            n=d.get("n", 0),
            n_events=d.get("n_events", 0),
        )


def cox_fit(data, covariates=("arm",), max_iter=MAX_ITER) -> CoxFit:
    """Fit the Cox model by Newton-Raphson on the Breslow partial likelihood.

    Raises
    ------
    SeparationError
        Singular information or diverging coefficients.
    ConvergenceError
        No convergence within ``max_iter`` iterations.
    """
    data = as_data(data)
    covariates = tuple(covariates)
    X = data.design(covariates)
    beta, ll, score, info, ev_t, s0, shift, it = _newton(data.time, data.status, X, None, max_iter)
    cov = np.linalg.inv(info)
    return CoxFit(
        beta=beta,
        se=np.sqrt(np.diag(cov)),
        baseline_cumhaz=_breslow(ev_t, s0, shift, float(data.time.max())),
        loglik=ll,
        n_iter=it,
        covariates=covariates,
        score=score,
        information=info,
        n=len(data),
        n_events=int(data.status.sum()),
        data=data,
    )


@dataclass(frozen=True, eq=False)
class ChangePointCoxFit:
    beta1: float
    beta2: float
    se1: float
    se2: float
    nu: float
    baseline_cumhaz: StepFunction
    loglik: float = np.nan
    n_iter: int = 0
    identified: tuple = (True, True)
    n_events_before: int = 0
    n_events_after: int = 0

    def to_dict(self):
        def num(x):
            return None if not np.isfinite(x) else float(x)

        return {
            "model": "coxcp",
            "nu": self.nu,
            "beta1": num(self.beta1),
            "beta2": num(self.beta2),
            "se1": num(self.se1),
            "se2": num(self.se2),
            "hazard_ratio_1": num(np.exp(self.beta1)),
            "hazard_ratio_2": num(np.exp(self.beta2)),
            "identified": list(self.identified),
            "loglik": self.loglik,
            "n_iter": self.n_iter,
            "n_events_before": self.n_events_before,
            "n_events_after": self.n_events_after,
            "baseline_cumhaz": {
                "times": self.baseline_cumhaz.jump_times.tolist(),
                "values": self.baseline_cumhaz.values[1:].tolist(),
                "domain_end": self.baseline_cumhaz.domain_end,
            },
        }


    @classmethod
    def from_dict(cls, d):
        """Rebuild a fit from :meth:`to_dict` output."""
        bh = d["baseline_cumhaz"]

        def num(x):
            return np.nan if x is None else float(x)

        return cls(
            num(d["beta1"]), num(d["beta2"]), num(d["se1"]), num(d["se2"]), float(d["nu"]),
            StepFunction(bh["times"], [0.0, *bh["values"]], bh.get("domain_end")),
            num(d.get("loglik")), d.get("n_iter", 0), tuple(d.get("identified", (True, True))),
            d.get("n_events_before", 0), d.get("n_events_after", 0),
        )


def _split_at(data, nu):
    """Episode split at ``nu``: rows (start, stop, event, x_before, x_after)."""
    late = data.time > nu
    start = np.concatenate((np.full(len(data), -np.inf), np.full(late.sum(), nu)))
    stop = np.concatenate((np.minimum(data.time, nu), data.time[late]))
    event = np.concatenate(((data.status == 1) & ~late, data.status[late] == 1))
    arm = data.arm.astype(float)
    X = np.zeros((stop.shape[0], 2))
    X[: len(data), 0] = arm
    X[len(data):, 1] = arm[late]
    return start, stop, event, X


def _arm_has_events(event, arm_col):
    return event.any() and np.unique(arm_col).size > 1


def cox_changepoint_fit(data, nu, allow_nonidentified=False) -> ChangePointCoxFit:
    """Cox model with hazard ratio ``exp(beta1)`` up to ``nu`` and ``exp(beta2)`` after.

    Implemented by splitting each subject's follow-up at ``nu`` into two
    episodes carrying the time-dependent covariates ``A*1(t<=nu)`` and
    ``A*1(t>nu)``; both periods share one baseline hazard.

    A period without events (or without both arms at risk) leaves its
    coefficient non-identified. By default this raises
    :class:`NonIdentifiedError` whose ``partial_fit`` holds the fit of the
    remaining coefficient; with ``allow_nonidentified=True`` that fit is
    returned directly, with NaN for the missing coefficient.
    """
    data = as_data(data)
    if not nu > 0:
        raise DomainError("change point must be positive")
    start, stop, event, X = _split_at(data, nu)
    n1 = len(data)
    first, second = slice(0, n1), slice(n1, None)
    ok1 = _arm_has_events(event[first], X[first, 0])
    ok2 = stop.shape[0] > n1 and _arm_has_events(event[second], X[second, 1])
    n_before, n_after = int(event[first].sum()), int(event[second].sum())
    if not ok1 and not ok2:
        raise NonIdentifiedError("neither period carries information on the treatment effect")
    cols = [j for j, ok in enumerate((ok1, ok2)) if ok]
    # without late episodes the split is the plain data set: use the identical path
    st = start if stop.shape[0] > n1 else None
    beta, ll, score, info, ev_t, s0, shift, it = _newton(stop, event, X[:, cols], st)
    se = np.sqrt(np.diag(np.linalg.inv(info)))
    full_beta = np.full(2, np.nan)
    full_se = np.full(2, np.nan)
    full_beta[cols] = beta
    full_se[cols] = se
    fit = ChangePointCoxFit(
        beta1=float(full_beta[0]),
        beta2=float(full_beta[1]),
        se1=float(full_se[0]),
        se2=float(full_se[1]),
        nu=float(nu),
        baseline_cumhaz=_breslow(ev_t, s0, shift, float(data.time.max())),
        loglik=ll,
        n_iter=it,
        identified=(ok1, ok2),
        n_events_before=n_before,
        n_events_after=n_after,
    )
    if not (ok1 and ok2) and not allow_nonidentified:
        missing = "beta1" if not ok1 else "beta2"
        raise NonIdentifiedError(
            f"{missing} is not identified: no events with both arms at risk on that side of nu={nu}",
            partial_fit=fit,
        )
    return fit


# ---------------------------------------------------------------------------
# Aalen additive hazards
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AalenFit:
    """Cumulative regression coefficients ``B(t)`` of Aalen's additive model.

    Row ``k`` of ``cumcoef`` and ``pointwise_var`` is the value at
    ``times[k]``; ``B(0) = 0`` before the first event time.
    """

    times: np.ndarray
    cumcoef: np.ndarray
    pointwise_var: np.ndarray
    names: tuple = ("intercept", "arm")
    stop_time: float = np.inf

    def column_index(self, column):
        if isinstance(column, str):
            return self.names.index(column)
        if not 0 <= column < self.cumcoef.shape[1]:
            raise IndexError(f"column {column} out of range")
        return column

    def at(self, t, column):
        j = self.column_index(column)
        k = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        vals = np.concatenate(([0.0], self.cumcoef[:, j]))
        return vals[k]

    def var_at(self, t, column):
        j = self.column_index(column)
        k = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        vals = np.concatenate(([0.0], self.pointwise_var[:, j]))
        return vals[k]

    def band(self, column, level=0.95):
        j = self.column_index(column)
        z = stats.norm.ppf(0.5 + level / 2)
        half = z * np.sqrt(self.pointwise_var[:, j])
        return self.cumcoef[:, j] - half, self.cumcoef[:, j] + half

    def local_slope(self, t, h, column):
        """Increment ``(B(t+h) - B(t)) / h`` and its standard error."""
        t = np.asarray(t, dtype=float)
        slope = (self.at(t + h, column) - self.at(t, column)) / h
        se = np.sqrt(np.maximum(self.var_at(t + h, column) - self.var_at(t, column), 0.0)) / h
        return slope, se

    def to_dict(self):
        return {
            "model": "aalen",
            "names": list(self.names),
            "stop_time": self.stop_time,
            "times": self.times.tolist(),
            "cumcoef": self.cumcoef.tolist(),
            "pointwise_var": self.pointwise_var.tolist(),
        }


def aalen_fit(data, covariates=("arm",)) -> AalenFit:
    """Least-squares Aalen estimator of the cumulative regression functions.

    An intercept is always included. Estimation stops before the first event
    time at which the at-risk design matrix is rank deficient.
    """
    data = as_data(data)
    covariates = tuple(covariates)
    X = np.column_stack((np.ones(len(data)), data.design(covariates)))
    order = np.argsort(data.time, kind="stable")
    times = data.time[order]
    X = X[order]
    is_event = data.status[order] == 1
    ev_t = np.unique(times[is_event])
    if ev_t.size == 0:
        raise EstimationError("no events")
    dB, dvar, ok = _kernels.aalen_increments(times, X, is_event, ev_t)
    if not ok[0]:
        raise EstimationError("design matrix is rank deficient at the first event time")
    keep = np.cumprod(ok).astype(bool)
    m = int(keep.sum())
    stop_time = float(ev_t[m]) if m < ev_t.size else np.inf
    return AalenFit(
        times=ev_t[:m],
        cumcoef=np.cumsum(dB[:m], axis=0),
        pointwise_var=np.cumsum(dvar[:m], axis=0),
        names=("intercept", *(str(c) for c in covariates)),
        stop_time=stop_time,
    )


@dataclass(frozen=True)
class ConstantEffect:
    psi: float
    se: float
    sup_stat: float
    p_value: float
    window: tuple


def constant_effect(aalen: AalenFit, column="arm", window=None, n_resample=1000, seed=0) -> ConstantEffect:
    """Constant slope of a cumulative coefficient and a constancy test.

    The slope is the weighted least-squares fit of ``B(t) - B(a)`` on
    ``t - a`` over event times in ``window = (a, b]`` with weights
    ``1 / (t - a)``, which gives ``sum(B(t_k) - B(a)) / sum(t_k - a)``.
    Its variance follows from independence of the increments.

    The test statistic is the maximal absolute deviation of ``B`` from the
    fitted line. Its null distribution is approximated by multiplying each
    increment by an independent standard normal.
    """
    j = aalen.column_index(column)
    a, b = window if window is not None else (0.0, float(aalen.times[-1]))
    sel = (aalen.times > a) & (aalen.times <= b)
    K = int(sel.sum())
    if K < 2:
        raise EstimationError("estimation window contains fewer than two event times")
    t = aalen.times[sel]
    B = aalen.cumcoef[sel, j] - aalen.at(a, j)
    V = aalen.pointwise_var[sel, j]
    dB = np.diff(np.concatenate(([0.0], B)))
    dV = np.diff(np.concatenate(([aalen.var_at(a, j)], V)))
    span = t - a
    D = span.sum()
    psi = B.sum() / D
    tail = (K - np.arange(K)) / D
    se = float(np.sqrt(np.sum(np.maximum(dV, 0.0) * tail**2)))
    sup_obs = float(np.max(np.abs(B - psi * span)))

    rng = SeedSpec(seed).rng()
    exceed = 0
    done = 0
    chunk = max(1, min(n_resample, 4_000_000 // K))
    while done < n_resample:
        r = min(chunk, n_resample - done)
        M = np.cumsum(rng.standard_normal((r, K)) * dB, axis=1)
        slope = M.sum(axis=1) / D
        sup = np.max(np.abs(M - slope[:, None] * span), axis=1)
        exceed += int(np.sum(sup >= sup_obs))
        done += r
    p = (1 + exceed) / (n_resample + 1)
    return ConstantEffect(float(psi), se, sup_obs, float(p), (float(a), float(b)))


# ---------------------------------------------------------------------------
# RMST / RMTL
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RMSTResult:
    rmst: float
    rmtl: float
    variance: float
    horizon: float

    @property
    def se(self):
        return float(np.sqrt(self.variance))


def rmst(curve, horizon) -> RMSTResult:
    """Restricted mean survival and mean time lost up to ``horizon``.

    ``curve`` is a :class:`KaplanMeier` result (variance from the standard
    counting-process formula) or a plain survival :class:`StepFunction`
    (variance reported as NaN).
    """
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    if isinstance(curve, KaplanMeier):
        if horizon > curve.last_time:
            raise DomainError(
                f"horizon {horizon} beyond the last observed time {curve.last_time}; no extrapolation"
            )
        step = curve.survival
    else:
        step = curve
        if step.domain_end is not None and horizon > step.domain_end:
            raise DomainError(f"horizon {horizon} beyond the curve's domain {step.domain_end}")
    area = float(step.integrate(horizon))
    variance = np.nan
    if isinstance(curve, KaplanMeier):
        sel = curve.times <= horizon
        tj = curve.times[sel]
        d = curve.n_events[sel]
        n = curve.n_at_risk[sel]
        tail = area - step.integrate(tj)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(tail > 0, tail**2 * d / (n * (n - d)), 0.0)
        variance = float(np.sum(terms))
    return RMSTResult(area, float(horizon - area), variance, float(horizon))


def rmtl_ratio(treated: RMSTResult, control: RMSTResult, level=0.95):
    """RMTL ratio (treated / control) with a log-scale delta-method CI."""
    ratio = treated.rmtl / control.rmtl
    se_log = np.sqrt(treated.variance / treated.rmtl**2 + control.variance / control.rmtl**2)
    z = stats.norm.ppf(0.5 + level / 2)
    return float(ratio), float(ratio * np.exp(-z * se_log)), float(ratio * np.exp(z * se_log))


# ---------------------------------------------------------------------------
# Relative risk
# ---------------------------------------------------------------------------


def relative_risk(surv1, surv0):
    """``P(T <= t | A=1) / P(T <= t | A=0)`` from two survival probabilities."""
    surv1 = np.asarray(surv1, dtype=float)
    surv0 = np.asarray(surv0, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(surv0 < 1, (1 - surv1) / (1 - surv0), np.nan)


def log_survival_ratio(surv1, surv0):
    """``log S1 / log S0``; equals ``exp(beta)`` at every t under proportional hazards."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(np.asarray(surv1, dtype=float)) / np.log(np.asarray(surv0, dtype=float))


@dataclass(frozen=True, eq=False)
class BandedCurve:
    times: np.ndarray
    estimate: np.ndarray
    lo_pointwise: np.ndarray
    hi_pointwise: np.ndarray
    lo_uniform: np.ndarray
    hi_uniform: np.ndarray
    level: float
    n_boot_used: int = 0

    def columns(self):
        return (
            ["t", "estimate", "lo", "hi", "lo_unif", "hi_unif"],
            [self.times, self.estimate, self.lo_pointwise, self.hi_pointwise,
             self.lo_uniform, self.hi_uniform],
        )


def _rr_from(beta_arm, cumhaz: StepFunction, tgrid):
    # Breslow estimate is flat after its last jump; skip the domain check
    L0 = cumhaz.values[np.searchsorted(cumhaz.jump_times, tgrid, side="right")]
    return relative_risk(np.exp(-L0 * np.exp(beta_arm)), np.exp(-L0))


def rr_curve(fit: CoxFit, tgrid, level=0.95, n_boot=1000, seed=0, column="arm") -> BandedCurve:
    """Plug-in relative risk curve with bootstrap pointwise and uniform bands.

    Bands use the studentised absolute deviation of the subject-level
    bootstrap; the uniform band is calibrated on the supremum over the grid
    of the same statistic, so it always contains the pointwise band. Grid
    points before the first event are returned as NaN.
    """
    if n_boot < 200:
        raise DomainError("n_boot must be at least 200")
    if fit.data is None:
        raise EstimationError("fit carries no data; refit with cox_fit to bootstrap")
    tgrid = np.asarray(tgrid, dtype=float)
    end = fit.baseline_cumhaz.domain_end
    if np.any(tgrid < 0) or (end is not None and np.any(tgrid > end)):
        raise DomainError("tgrid must lie within the baseline support")
    j = fit.covariates.index(column)
    est = _rr_from(fit.beta[j], fit.baseline_cumhaz, tgrid)

    data = fit.data
    n = len(data)
    boot = np.full((n_boot, tgrid.size), np.nan)
    for b in range(n_boot):
        idx = SeedSpec(seed, b).rng().integers(0, n, n)
        try:
            f = cox_fit(data.subset(idx), fit.covariates)
        except EstimationError:
            continue
        boot[b] = _rr_from(f.beta[j], f.baseline_cumhaz, tgrid)
    used = int(np.sum(~np.all(np.isnan(boot), axis=1)))
    with np.errstate(invalid="ignore", divide="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sd = np.nanstd(boot, axis=0, ddof=1)
        dev = np.abs(boot - est) / sd
        c_point = np.nanquantile(dev, level, axis=0)
        c_unif = np.nanquantile(np.nanmax(dev, axis=1), level)
    return BandedCurve(
        tgrid, est,
        est - c_point * sd, est + c_point * sd,
        est - c_unif * sd, est + c_unif * sd,
        float(level), used,
    )
