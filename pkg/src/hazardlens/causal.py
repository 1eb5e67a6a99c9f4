"""Coupled potential outcomes and the principal-stratum causal hazard ratio.

The causal hazard ratio at ``t`` compares the hazards of ``T1`` and ``T0``
among units that would survive to ``t`` under both assignments,
``{T0 >= t, T1 >= t}``. It is not identified from ``(T, A)`` alone; this
module provides simulators where it is known, a Monte Carlo estimator, and
two sensitivity routes that map an observed hazard ratio to it.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special, stats

from . import _kernels
from .core import (
    DomainError,
    PiecewiseLinearCumHaz,
    PotentialOutcomes,
    SeedSpec,
    StepFunction,
    SurvivalData,
    inverse_cumulative,
    write_table,
)
from .estimate import CoxFit, KaplanMeier, aalen_fit, cox_fit
from .frailty import DiscreteFrailty, GammaFrailty

__all__ = [
    "GammaShared",
    "TwoLevel",
    "SharedAdditive",
    "AdditiveHazard",
    "gen_coupled",
    "gen_two_level",
    "kendall_tau",
    "theta_from_tau",
    "tau_from_theta",
    "causal_hr_closed",
    "causal_hr_from_coxfit",
    "HRCurve",
    "causal_hr_mc",
    "SensitivityInput",
    "SensitivityCurve",
    "parse_sr",
    "sensitivity_sr",
    "gamma_coupling_sensitivity",
    "stratum_baseline_hazard",
    "default_bandwidth",
    "hazard_difference_causal",
    "cox_selection_check",
    "shared_additive_contrast",
]

# units generated per random stream; fixed so output does not depend on workers
CHUNK = 1 << 16
MIN_STRATUM = 200
MIN_EVENTS_PER_BIN = 50


def _seedspec(seed):
    if isinstance(seed, SeedSpec):
        return seed
    return SeedSpec(0 if seed is None else int(seed))


def _cumhaz0(lambda0):
    if isinstance(lambda0, (int, float, np.floating)):
        return PiecewiseLinearCumHaz.constant(float(lambda0))
    return lambda0


# ---------------------------------------------------------------------------
# Coupling models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GammaShared:
    """Shared Gamma frailty with hazard ``Z exp(beta A + theta e^{beta A} t)``.

    Both marginals are exact Cox models with unit baseline hazard and hazard
    ratio ``exp(beta)``; Kendall's tau of ``(T0, T1)`` is ``theta / (theta + 2)``.
    """

    beta: float
    theta: float

    def __post_init__(self):
        if not self.theta >= 0:
            raise DomainError("theta must be nonnegative")


@dataclass(frozen=True, eq=False)
class TwoLevel:
    """Nested frailties ``(Z1, Z2)`` whose marginals are exactly Cox.

    Given ``Z1`` the model is the Gamma(1) conditional hazard model with
    ``nu = inf``; ``Z2`` is Gamma with mean 1 and variance ``theta2``.
    """

    beta: float
    lambda0: object = 1.0
    theta2: float = 1.0

    def __post_init__(self):
        if not self.theta2 >= 0:
            raise DomainError("theta2 must be nonnegative")


@dataclass(frozen=True)
class SharedAdditive:
    """``T0 = V0 + Z`` and ``T1 = exp(-beta) (V1 + Z)`` with Gamma components.

    ``Z`` has mean ``1 - alpha`` and ``V0, V1`` have mean ``alpha``, all with
    unit variance, so ``E T0 = 1``.
    """

    alpha: float
    beta: float

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise DomainError("alpha must lie in (0, 1)")


def _gl_integral(fn, t, *args, nodes=32):
    # composite-free Gauss-Legendre on [0, t]; exact for polynomials of degree < 2*nodes
    x, w = np.polynomial.legendre.leggauss(nodes)
    t = np.asarray(t, dtype=float)
    s = 0.5 * t[..., None] * (x + 1.0)
    vals = fn(s, *[np.asarray(a)[..., None] for a in args])
    return 0.5 * t * np.sum(w * vals, axis=-1)


@dataclass(frozen=True, eq=False)
class AdditiveHazard:
    """Hazard ``psi(t) A + omega(t, Z)`` for each potential outcome.

    ``cum_psi`` and ``cum_omega`` are the integrals from 0; when omitted they
    are computed by Gauss-Legendre quadrature, which suits smooth inputs.
    """

    psi: Callable
    omega: Callable
    frailty: object
    cum_psi: Callable | None = None
    cum_omega: Callable | None = None
    t_cap: float = 1e6

    @classmethod
    def linear(cls, psi=0.1, frailty=None):
        """Constant ``psi`` and ``omega(t, z) = z``."""
        if frailty is None:
            frailty = DiscreteFrailty((0.5, 1.5), (0.5, 0.5))
        return cls(
            psi=lambda t: np.full_like(np.asarray(t, dtype=float), psi),
            omega=lambda t, z: np.broadcast_to(z, np.broadcast(t, z).shape).astype(float),
            frailty=frailty,
            cum_psi=lambda t: psi * np.asarray(t, dtype=float),
            cum_omega=lambda t, z: np.asarray(t, dtype=float) * z,
        )

    def Psi(self, t):
        if self.cum_psi is not None:
            return np.asarray(self.cum_psi(t), dtype=float)
        return _gl_integral(self.psi, t)

    def Omega(self, t, z):
        if self.cum_omega is not None:
            return np.asarray(self.cum_omega(t, z), dtype=float)
        return _gl_integral(self.omega, t, z)

    def check_hazard(self, t, z, a):
        """Raise :class:`DomainError` at the first ``(t, z)`` with negative hazard."""
        h = np.asarray(self.omega(t, z), dtype=float) + a * np.asarray(self.psi(t), dtype=float)
        bad = np.flatnonzero(np.ravel(h < 0))
        if bad.size:
            i = bad[0]
            tt = np.ravel(np.broadcast_to(t, h.shape))[i]
            zz = np.ravel(np.broadcast_to(z, h.shape))[i]
            raise DomainError(f"negative hazard {np.ravel(h)[i]:.6g} at t={tt:.6g}, z={zz:.6g}")


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def _gen_gamma_shared(spec: GammaShared, rng, n):
    th = spec.theta
    z = GammaFrailty(th).sample(rng, n)
    v0 = rng.exponential(size=n)
    v1 = rng.exponential(size=n)
    if th == 0:
        t0, t1 = v0 / z, v1 / (z * math.exp(spec.beta))
    else:
        t0 = np.log1p(th * v0 / z) / th
        t1 = np.log1p(th * v1 / z) / (th * math.exp(spec.beta))
    return t0, t1, z


def _gen_two_level(spec: TwoLevel, rng, n):
    z1 = rng.gamma(1.0, 1.0, n)
    z2 = GammaFrailty(spec.theta2).sample(rng, n)
    cum0 = _cumhaz0(spec.lambda0)
    out = []
    for arm in (0, 1):
        e = rng.exponential(size=n)
        # conditional cumulative hazard Z2 expm1(theta2 Z1 (e^x - 1)) / theta2, x = L0 e^{beta a}
        if spec.theta2 == 0:
            inner = e / z2 / z1
        else:
            inner = np.log1p(spec.theta2 * e / z2) / (spec.theta2 * z1)
        x = np.log1p(inner)
        out.append(inverse_cumulative(cum0, x * math.exp(-spec.beta * arm)))
    return out[0], out[1], np.column_stack((z1, z2))


def _gen_shared_additive(spec: SharedAdditive, rng, n):
    al = spec.alpha
    z = rng.gamma((1 - al) ** 2, 1 / (1 - al), n)
    v0 = rng.gamma(al**2, 1 / al, n)
    v1 = rng.gamma(al**2, 1 / al, n)
    return v0 + z, math.exp(-spec.beta) * (v1 + z), z


def _solve_additive(spec: AdditiveHazard, e, z, a):
    # vectorised bisection for a Psi(t) + Omega(t, z) = e
    total = lambda t: a * spec.Psi(t) + spec.Omega(t, z)
    lo = np.zeros_like(e)
    hi = np.ones_like(e)
    for _ in range(64):
        short = (total(hi) < e) & (hi < spec.t_cap)
        if not short.any():
            break
        hi = np.where(short, hi * 2.0, hi)
    never = total(hi) < e
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        below = total(mid) < e
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    t = 0.5 * (lo + hi)
    t[never] = np.inf
    return t


def _gen_additive(spec: AdditiveHazard, rng, n):
    z = spec.frailty.sample(rng, n)
    out = []
    for arm in (0, 1):
        e = rng.exponential(size=n)
        t = _solve_additive(spec, e, z, arm)
        grid = np.where(np.isfinite(t), t, spec.t_cap)[:, None] * np.linspace(0.0, 1.0, 17)
        spec.check_hazard(grid, z[:, None], arm)
        out.append(t)
    return out[0], out[1], z


_GENERATORS = {
    GammaShared: _gen_gamma_shared,
    TwoLevel: _gen_two_level,
    SharedAdditive: _gen_shared_additive,
    AdditiveHazard: _gen_additive,
}


def gen_coupled(spec, n, seed=0, workers=1) -> PotentialOutcomes:
    """Simulate ``n`` units with potential outcomes ``(T0, T1)`` and frailty.

    ``T0`` and ``T1`` are independent given the frailty and ``A`` is
    Bernoulli(1/2). Units are generated in fixed blocks, each from its own
    stream of ``seed``, so the result is identical for any ``workers``. A
    ``numpy.random.Generator`` may be passed instead and is used sequentially.
    """
    if n < 1:
        raise DomainError("n must be positive")
    gen = _GENERATORS.get(type(spec))
    if gen is None:
        raise TypeError(f"unsupported coupling {type(spec).__name__}")
    blocks = [(c, min(CHUNK, n - c * CHUNK)) for c in range(-(-n // CHUNK))]
    if isinstance(seed, np.random.Generator):
        # a caller-owned stream is consumed block by block, in order
        shared = seed
        workers = 1
    else:
        shared = None
        ss = _seedspec(seed)

    def run(block):
        c, size = block
        rng = shared if shared is not None else ss.rng(c)
        a = (rng.random(size) < 0.5).astype(np.int8)
        t0, t1, z = gen(spec, rng, size)
        return t0, t1, z, a

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    t0, t1, z, a = (np.concatenate(p) for p in zip(*parts))
    return PotentialOutcomes(t0, t1, z, a)


def gen_two_level(beta, lambda0=1.0, n=20000, seed=0, theta2=1.0) -> PotentialOutcomes:
    """Two-level frailty generator; ``z`` has columns ``(Z1, Z2)``."""
    return gen_coupled(TwoLevel(beta, lambda0, theta2), n, seed)


# ---------------------------------------------------------------------------
# Kendall's tau
# ---------------------------------------------------------------------------


def _tie_pairs(sorted_vals):
    _, counts = np.unique(sorted_vals, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def kendall_tau(x, y=None, backend=None) -> float:
    """Kendall's tau-b in ``O(n log n)`` by counting inversions.

    Accepts two sequences or a :class:`PotentialOutcomes` (using ``t0, t1``).
    """
    if y is None:
        x, y = x.t0, x.t1
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    if n < 2 or y.shape[0] != n:
        raise DomainError("need at least two paired observations")
    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    n0 = n * (n - 1) // 2
    n1 = _tie_pairs(xs)
    n2 = _tie_pairs(np.sort(ys))
    xy = np.unique(np.column_stack((xs, ys)), axis=0, return_counts=True)[1]
    n3 = int(np.sum(xy * (xy - 1) // 2))
    swaps = _kernels.count_inversions(ys, backend=backend)
    denom = math.sqrt((n0 - n1) * (n0 - n2))
    if denom == 0:
        return float("nan")
    return (n0 - n1 - n2 + n3 - 2 * swaps) / denom


def theta_from_tau(tau):
    """Gamma-frailty variance giving Kendall's tau: ``2 tau / (1 - tau)``."""
    tau = np.asarray(tau, dtype=float)
    if np.any((tau < 0) | (tau >= 1)):
        raise DomainError("tau must lie in [0, 1)")
    out = 2 * tau / (1 - tau)
    return out if np.ndim(out) else float(out)


def tau_from_theta(theta):
    theta = np.asarray(theta, dtype=float)
    out = theta / (theta + 2)
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# Causal hazard ratio: closed form and Monte Carlo
# ---------------------------------------------------------------------------


def causal_hr_closed(beta, theta, t, cumhaz0=None):
    """``exp(beta) exp{theta L0(t) (exp(beta) - 1)}`` with ``L0(t) = t`` by default."""
    if theta < 0:
        raise DomainError("theta must be nonnegative")
    t = np.asarray(t, dtype=float)
    L0 = t if cumhaz0 is None else np.asarray(cumhaz0(t), dtype=float)
    eb = math.exp(beta)
    out = eb * np.exp(theta * L0 * (eb - 1.0))
    return out if np.ndim(out) else float(out)


def causal_hr_from_coxfit(fit: CoxFit, theta, tgrid, column="arm"):
    """Causal hazard ratio implied by a Cox fit under shared Gamma frailty."""
    return np.asarray(
        causal_hr_closed(fit.coef(column), theta, np.asarray(tgrid, dtype=float), fit.baseline_cumhaz)
    )


@dataclass(frozen=True, eq=False)
class HRCurve:
    """Monte Carlo principal-stratum hazards on a grid.

    ``flagged`` marks points whose stratum has fewer than ``MIN_STRATUM``
    units or no events in an arm; their estimates are NaN when undefined.
    """

    times: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    hazard1: np.ndarray
    hazard0: np.ndarray
    n_stratum: np.ndarray
    flagged: np.ndarray
    bandwidth: float
    difference: np.ndarray = field(default=None)
    difference_se: np.ndarray = field(default=None)

    def columns(self):
        z = stats.norm.ppf(0.975)
        header = ["t", "estimate", "se", "lo", "hi", "n_stratum", "flagged"]
        cols = [self.times, self.estimate, self.se, self.estimate - z * self.se,
                self.estimate + z * self.se, self.n_stratum, self.flagged.astype(int)]
        return header, cols

    def to_csv(self, path):
        write_table(path, *self.columns())


def _stratum_bin(t0, t1, t, h, exposure):
    s = np.minimum(t0, t1) >= t
    a0, a1 = t0[s], t1[s]
    ns = a0.shape[0]
    i1 = (a1 < t + h).astype(float)
    i0 = (a0 < t + h).astype(float)
    if exposure:
        x1 = np.minimum(a1, t + h) - t
        x0 = np.minimum(a0, t + h) - t
    else:
        x1 = x0 = np.full(ns, h)
    return ns, np.column_stack((i1, x1, i0, x0))


def default_bandwidth(pairs: PotentialOutcomes, tgrid, min_events=MIN_EVENTS_PER_BIN):
    """Smallest bandwidth on a doubling ladder with enough events per bin.

    Only grid points whose joint-survivor stratum is large enough count.
    """
    t0, t1 = np.asarray(pairs.t0), np.asarray(pairs.t1)
    tgrid = np.asarray(tgrid, dtype=float)
    m = np.minimum(t0, t1)
    scale = float(np.median(np.maximum(t0, t1)[np.isfinite(np.maximum(t0, t1))]))
    h = scale / 1024
    for _ in range(20):
        ok = True
        for t in tgrid:
            s = m >= t
            if s.sum() < MIN_STRATUM:
                continue
            d1 = np.sum(t1[s] < t + h)
            d0 = np.sum(t0[s] < t + h)
            if min(d1, d0) < min_events:
                ok = False
                break
        if ok:
            return h
        h *= 2
    return h


def causal_hr_mc(pairs: PotentialOutcomes, tgrid, bandwidth=None, exposure=True) -> HRCurve:
    """Monte Carlo estimate of the causal hazard ratio ``HR(t)``.

    For each ``t`` the stratum ``{min(T0, T1) >= t}`` is fixed and each
    arm's hazard on ``[t, t + h)`` is estimated by events over exposure time
    (``exposure=True``) or by events over ``h`` times the stratum size. The
    exposure form removes the first-order bias from depletion within the bin.
    Standard errors use the delta method on per-unit indicators.
    """
    t0, t1 = np.asarray(pairs.t0, dtype=float), np.asarray(pairs.t1, dtype=float)
    tgrid = np.asarray(tgrid, dtype=float)
    h = default_bandwidth(pairs, tgrid) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise DomainError("bandwidth must be positive")
    k = tgrid.shape[0]
    est, se, lam1, lam0, dif, dif_se = (np.full(k, np.nan) for _ in range(6))
    ns_all = np.zeros(k, dtype=np.int64)
    flagged = np.zeros(k, dtype=bool)
    for i, t in enumerate(tgrid):
        ns, U = _stratum_bin(t0, t1, t, h, exposure)
        ns_all[i] = ns
        if ns < MIN_STRATUM:
            flagged[i] = True
        if ns < 2:
            continue
        d1, e1, d0, e0 = U.sum(axis=0)
        if d1 == 0 or d0 == 0:
            flagged[i] = True
            if d0 == 0:
                continue
        cov = np.cov(U, rowvar=False) * ns
        lam1[i], lam0[i] = d1 / e1, d0 / e0
        # gradients of log(d1/e1) - log(d0/e0) and of d1/e1 - d0/e0
        g_dif = np.array([1 / e1, -d1 / e1**2, -1 / e0, d0 / e0**2])
        dif[i] = lam1[i] - lam0[i]
        dif_se[i] = math.sqrt(max(g_dif @ cov @ g_dif, 0.0))
        if d1 > 0:
            g_log = np.array([1 / d1, -1 / e1, -1 / d0, 1 / e0])
            est[i] = lam1[i] / lam0[i]
            se[i] = est[i] * math.sqrt(max(g_log @ cov @ g_log, 0.0))
    return HRCurve(tgrid, est, se, lam1, lam0, ns_all, flagged, h, dif, dif_se)


# ---------------------------------------------------------------------------
# Sensitivity analyses
# ---------------------------------------------------------------------------


def _as_curve(obj):
    if isinstance(obj, (int, float, np.floating)):
        value = float(obj)
        return lambda t: np.full_like(np.asarray(t, dtype=float), value)
    if isinstance(obj, (KaplanMeier, StepFunction)) or callable(obj):
        return lambda t: np.asarray(obj(np.asarray(t, dtype=float)), dtype=float)
    raise TypeError(f"cannot interpret {obj!r} as a curve")


@dataclass(frozen=True, eq=False)
class SensitivityInput:
    """Observed hazard ratio, arm survival curves and a sensitivity ratio.

    Each field is a constant, a step function, a Kaplan-Meier curve or any
    vectorised callable of ``t``.
    """

    obs_hr: object
    surv0: object
    surv1: object
    sr: object = 1.0


@dataclass(frozen=True, eq=False)
class SensitivityCurve:
    times: np.ndarray
    obs_hr: np.ndarray
    pi: np.ndarray
    sr: np.ndarray
    causal_hr: np.ndarray
    failed: np.ndarray

    def columns(self):
        return ["t", "obs_hr", "pi", "sr", "causal_hr"], [self.times, self.obs_hr, self.pi, self.sr, self.causal_hr]

    def to_csv(self, path):
        write_table(path, *self.columns())


def parse_sr(text):
    """Sensitivity-ratio curve from ``const:v``, ``piecewise:t1=v1,t2=v2,...`` or a CSV path.

    In the piecewise form ``vk`` applies from ``tk`` on and the first knot
    must be 0. A CSV file needs columns ``t,sr`` and is read as a
    right-continuous step function.
    """
    text = text.strip()
    kind, _, body = text.partition(":")
    try:
        if kind == "const":
            v = float(body)
            if v < 0:
                raise DomainError("sensitivity ratio must be nonnegative")
            return StepFunction.constant(v)
        if kind == "piecewise":
            knots, vals = zip(*(item.split("=") for item in body.split(",")))
            knots = np.array(knots, dtype=float)
            vals = np.array(vals, dtype=float)
        else:
            tab = np.loadtxt(text, delimiter=",", skiprows=1, ndmin=2)
            knots, vals = tab[:, 0], tab[:, 1]
    except (ValueError, OSError) as exc:
        raise DomainError(f"cannot parse sensitivity ratio {text!r}: {exc}") from exc
    if knots[0] != 0:
        raise DomainError("first sensitivity-ratio knot must be 0")
    if np.any(vals < 0):
        raise DomainError("sensitivity ratio must be nonnegative")
    return StepFunction(knots[1:], vals)


def sensitivity_sr(inp: SensitivityInput, tgrid) -> SensitivityCurve:
    """Causal hazard ratio ``obs_hr / (pi + SR (1 - pi))`` with ``pi = S0 / S1``.

    ``pi`` above 1 (possible with noisy survival estimates) is clipped to 1
    with a warning. Grid points with a zero denominator are NaN and marked
    in ``failed``.
    """
    tgrid = np.asarray(tgrid, dtype=float)
    obs = _as_curve(inp.obs_hr)(tgrid)
    s0 = _as_curve(inp.surv0)(tgrid)
    s1 = _as_curve(inp.surv1)(tgrid)
    sr = _as_curve(inp.sr)(tgrid)
    if np.any(sr < 0):
        raise DomainError("sensitivity ratio must be nonnegative")
    if np.any((s0 <= 0) | (s1 <= 0) | (s0 > 1) | (s1 > 1)):
        raise DomainError("survival curves must lie in (0, 1]")
    pi = s0 / s1
    if np.any(pi > 1):
        warnings.warn("S0/S1 exceeds 1 at some grid points; clipped to 1", RuntimeWarning, stacklevel=2)
        pi = np.minimum(pi, 1.0)
    denom = pi + sr * (1 - pi)
    failed = denom == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        hr = np.where(failed, np.nan, obs / denom)
    return SensitivityCurve(tgrid, obs, pi, sr, hr, failed)


def gamma_coupling_sensitivity(fit: CoxFit, taus, tgrid, column="arm"):
    """One causal hazard-ratio curve per Kendall's tau under shared Gamma frailty."""
    return {float(tau): causal_hr_from_coxfit(fit, theta_from_tau(tau), tgrid, column) for tau in taus}


# ---------------------------------------------------------------------------
# Hazard differences
# ---------------------------------------------------------------------------


def _frailty_expectation(frailty, fn):
    if isinstance(frailty, DiscreteFrailty):
        z = np.asarray(frailty.atoms)
        return np.tensordot(fn(z), np.asarray(frailty.probs), axes=([-1], [0]))
    if isinstance(frailty, GammaFrailty):
        if frailty.theta == 0:
            return fn(np.ones(1))[..., 0]
        k = 1.0 / frailty.theta
        x, w = special.roots_genlaguerre(80, k - 1)
        return np.tensordot(fn(x * frailty.theta), w / special.gamma(k), axes=([-1], [0]))
    raise TypeError(f"unsupported frailty {type(frailty).__name__}")


def stratum_baseline_hazard(spec: AdditiveHazard, tgrid):
    """Control-arm hazard among joint survivors, ``E[w e^{-2 W}] / E[e^{-2 W}]``.

    Here ``w = omega(t, Z)`` and ``W`` is its integral from 0 to ``t``.
    """
    t = np.asarray(tgrid, dtype=float)[:, None]
    num = _frailty_expectation(spec.frailty, lambda z: spec.omega(t, z) * np.exp(-2 * spec.Omega(t, z)))
    den = _frailty_expectation(spec.frailty, lambda z: np.exp(-2 * spec.Omega(t, z)))
    return num / den


@dataclass(frozen=True, eq=False)
class HazardDifference:
    times: np.ndarray
    psi_true: np.ndarray
    psi_mc: np.ndarray
    psi_mc_se: np.ndarray
    psi_aalen: np.ndarray
    psi_aalen_se: np.ndarray
    baseline_true: np.ndarray
    baseline_mc: np.ndarray
    bandwidth: float


def hazard_difference_causal(spec: AdditiveHazard, tgrid, n=50000, seed=0, bandwidth=None) -> HazardDifference:
    """Specified ``psi``, principal-stratum MC difference and marginal Aalen slope.

    The Aalen slope is the increment of the unadjusted cumulative arm
    coefficient over ``[t, t + h)`` divided by ``h``. A difference needs
    more events than a ratio to be estimated usefully, so the default
    bandwidth asks for ``20 * MIN_EVENTS_PER_BIN`` events per bin.
    """
    tgrid = np.asarray(tgrid, dtype=float)
    pairs = gen_coupled(spec, n, seed)
    if bandwidth is None:
        bandwidth = default_bandwidth(pairs, tgrid, 20 * MIN_EVENTS_PER_BIN)
    curve = causal_hr_mc(pairs, tgrid, bandwidth)
    h = curve.bandwidth
    t_obs = pairs.t_obs
    finite = np.isfinite(t_obs)
    data = SurvivalData(np.where(finite, t_obs, spec.t_cap), finite.astype(np.int8), pairs.a)
    af = aalen_fit(data)
    slope, slope_se = af.local_slope(tgrid, h, "arm")
    return HazardDifference(
        tgrid, np.asarray(spec.psi(tgrid), dtype=float), curve.difference, curve.difference_se,
        slope, slope_se, stratum_baseline_hazard(spec, tgrid), curve.hazard0, h,
    )


# ---------------------------------------------------------------------------
# Selection under a correctly specified Cox model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SelectionCheck:
    """Empirical and analytic ``E(V | T > t, A = a)``; arrays are ``(len(t), 2)``."""

    times: np.ndarray
    empirical: np.ndarray
    se: np.ndarray
    analytic: np.ndarray
    n_at_risk: np.ndarray

    def rows(self):
        for i, t in enumerate(self.times):
            for a in (0, 1):
                yield t, a, self.empirical[i, a], self.se[i, a], self.analytic[i, a], int(self.n_at_risk[i, a])


def cox_selection_check(beta, lambda0=1.0, n=100000, seed=0, tgrid=(0.0, 1.0, 2.0, 4.0)) -> SelectionCheck:
    """Simulate ``L0(T) = exp(-A beta) V`` and compare ``E(V | T > t, A = a)`` with ``1 + e^{a beta} L0(t)``."""
    if n < 1000:
        raise DomainError("n must be at least 1000")
    cum0 = _cumhaz0(lambda0)
    rng = _seedspec(seed).rng()
    a = (rng.random(n) < 0.5).astype(np.int8)
    v = rng.exponential(size=n)
    T = inverse_cumulative(cum0, v * np.exp(-beta * a))
    tgrid = np.asarray(tgrid, dtype=float)
    k = tgrid.shape[0]
    emp = np.full((k, 2), np.nan)
    se = np.full((k, 2), np.nan)
    cnt = np.zeros((k, 2), dtype=np.int64)
    for i, t in enumerate(tgrid):
        for arm in (0, 1):
            sel = v[(a == arm) & (T > t)]
            cnt[i, arm] = sel.size
            if sel.size > 1:
                emp[i, arm] = sel.mean()
                se[i, arm] = sel.std(ddof=1) / math.sqrt(sel.size)
    L0 = np.asarray(cum0(tgrid), dtype=float)
    analytic = 1 + np.exp(beta * np.array([0.0, 1.0]))[None, :] * L0[:, None]
    return SelectionCheck(tgrid, emp, se, analytic, cnt)


# ---------------------------------------------------------------------------
# Shared additive coupling versus the Gamma-frailty route
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AdditiveContrast:
    """Causal hazard ratio from simulation against the Gamma-frailty mapping.

    ``gamma_route`` plugs the fitted Cox coefficient and Breslow baseline
    into the shared-Gamma formula at the ``theta`` matching the empirical
    Kendall's tau. ``marginal_hr`` is the binned observed hazard ratio with
    standard error, used to measure departure from proportional hazards.
    """

    times: np.ndarray
    mc: HRCurve
    gamma_route: np.ndarray
    tau_hat: float
    theta_hat: float
    cox_beta: float
    cox_se: float
    z_gap: np.ndarray
    marginal_hr: np.ndarray
    marginal_se: np.ndarray
    ph_z: np.ndarray

    @property
    def max_gap(self):
        return float(np.nanmax(np.abs(self.z_gap)))

    @property
    def max_ph_deviation(self):
        return float(np.nanmax(np.abs(self.ph_z)))


def _marginal_binned_hr(t_obs, a, tgrid, h):
    hr = np.full(tgrid.shape, np.nan)
    se = np.full(tgrid.shape, np.nan)
    for i, t in enumerate(tgrid):
        rates = []
        for arm in (0, 1):
            x = t_obs[(a == arm) & (t_obs >= t)]
            d = np.sum(x < t + h)
            e = np.sum(np.minimum(x, t + h) - t)
            rates.append((d, e))
        (d0, e0), (d1, e1) = rates
        if d0 > 0 and d1 > 0:
            hr[i] = (d1 / e1) / (d0 / e0)
            se[i] = hr[i] * math.sqrt(1 / d1 + 1 / d0)
    return hr, se


def shared_additive_contrast(alpha, beta, n=500000, seed=0, tgrid=(0.25, 0.5, 1.0, 1.5, 2.0),
                             bandwidth=None) -> AdditiveContrast:
    """Compare the simulated causal HR under :class:`SharedAdditive` with the Gamma route."""
    tgrid = np.asarray(tgrid, dtype=float)
    pairs = gen_coupled(SharedAdditive(alpha, beta), n, seed)
    mc = causal_hr_mc(pairs, tgrid, bandwidth)
    tau = kendall_tau(pairs)
    theta = theta_from_tau(max(tau, 0.0))
    t_obs = pairs.t_obs
    fit = cox_fit(SurvivalData(t_obs, np.ones(len(pairs), dtype=np.int8), pairs.a))
    route = causal_hr_from_coxfit(fit, theta, tgrid)
    gap = (mc.estimate - route) / mc.se
    mhr, mse = _marginal_binned_hr(t_obs, np.asarray(pairs.a), tgrid, mc.bandwidth)
    ph_z = (np.log(mhr) - fit.coef("arm")) / (mse / mhr)
    return AdditiveContrast(tgrid, mc, route, tau, theta, fit.coef("arm"), float(fit.se[0]), gap, mhr, mse, ph_z)
