"""Frailty distributions and the marginal <-> conditional hazard mapping.

With multiplicative frailty ``lambda(t; a, z) = z * lambda*(t; a)`` the
marginal cumulative hazard ``L`` and the frailty-free one ``L*`` satisfy
``L* = phi^{-1}(exp(-L))`` where ``phi`` is the Laplace transform of ``Z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import DomainError, PiecewiseLinearCumHaz, PotentialOutcomes, StepFunction, inverse_cumulative, make_rng

__all__ = [
    "GammaFrailty",
    "DiscreteFrailty",
    "SIM31_FRAILTY",
    "laplace",
    "dlog_laplace",
    "inv_laplace",
    "g_z",
    "MarginalModel",
    "conditional_cumhaz",
    "hrz_curve",
    "selection_curve",
    "selection_ratio",
    "conditional_hazard_dgp",
]

ROOT_TOL = 1e-12
ROOT_MAX_ITER = 200


@dataclass(frozen=True)
class GammaFrailty:
    """Gamma frailty with mean 1 and variance ``theta`` (``theta=0`` is degenerate at 1)."""

    theta: float

    def __post_init__(self):
        if not self.theta >= 0:
            raise DomainError("theta must be nonnegative")

    @property
    def mean(self):
        return 1.0

    @property
    def variance(self):
        return float(self.theta)

    def log_laplace(self, u):
        u = np.asarray(u, dtype=float)
        if self.theta == 0:
            return -u
        return -np.log1p(self.theta * u) / self.theta

    def dlog_laplace(self, u):
        return -1.0 / (1.0 + self.theta * np.asarray(u, dtype=float))

    def inv_laplace_log(self, log_s):
        log_s = np.asarray(log_s, dtype=float)
        if self.theta == 0:
            return -log_s
        return np.expm1(-self.theta * log_s) / self.theta

    def sample(self, rng, n):
        if self.theta == 0:
            return np.ones(n)
        return rng.gamma(1.0 / self.theta, self.theta, n)


@dataclass(frozen=True)
class DiscreteFrailty:
    """Finite mixture: ``Z = atoms[i]`` with probability ``probs[i]``."""

    atoms: tuple
    probs: tuple

    def __post_init__(self):
        z = np.asarray(self.atoms, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if z.shape != p.shape or z.ndim != 1 or z.size == 0:
            raise DomainError("atoms and probs must be equal-length 1-d sequences")
        if np.any(z <= 0) or np.any(p <= 0):
            raise DomainError("atoms and probabilities must be positive")
        if abs(p.sum() - 1.0) > 1e-9:
            raise DomainError("probabilities must sum to 1")
        object.__setattr__(self, "atoms", tuple(z.tolist()))
        object.__setattr__(self, "probs", tuple(p.tolist()))

    @property
    def mean(self):
        return float(np.dot(self.atoms, self.probs))

    @property
    def variance(self):
        z = np.asarray(self.atoms)
        return float(np.dot(self.probs, (z - self.mean) ** 2))

    def _terms(self, u):
        u = np.asarray(u, dtype=float)
        z = np.asarray(self.atoms)
        return np.log(self.probs) - np.multiply.outer(u, z), z

    def log_laplace(self, u):
        terms, _ = self._terms(u)
        return logsumexp(terms, axis=-1)

    def dlog_laplace(self, u):
        terms, z = self._terms(u)
        w = np.exp(terms - logsumexp(terms, axis=-1, keepdims=True))
        return -(w @ z)

    def inv_laplace_log(self, log_s):
        """Solve ``log phi(u) = log_s`` by bracketed Newton iteration.

        ``log phi`` is convex and decreasing, so Newton steps from the left of
        the root never overshoot; bisection is kept as a safeguard.
        """
        log_s = np.asarray(log_s, dtype=float)
        shape = log_s.shape
        target = log_s.ravel()
        lo = np.zeros_like(target)
        hi = np.ones_like(target)
        for _ in range(ROOT_MAX_ITER):
            grow = self.log_laplace(hi) > target
            if not grow.any():
                break
            hi = np.where(grow, hi * 2.0, hi)
        u = lo.copy()
        for _ in range(ROOT_MAX_ITER):
            g = self.log_laplace(u) - target
            s = np.exp(target)
            if np.all((np.abs(np.exp(g) - 1.0) * s < ROOT_TOL) & (np.abs(g) < 1e-13)):
                break
            lo = np.where(g > 0, u, lo)
            hi = np.where(g < 0, u, hi)
            cand = u - g / self.dlog_laplace(u)
            bad = ~((cand >= lo) & (cand <= hi))
            u = np.where(bad, 0.5 * (lo + hi), cand)
        return u.reshape(shape)

    def sample(self, rng, n):
        return np.asarray(self.atoms)[rng.choice(len(self.atoms), size=n, p=self.probs)]


SIM31_FRAILTY = DiscreteFrailty((0.2, 1.2), (0.2, 0.8))


def laplace(f, u):
    """Laplace transform ``E exp(-Z u)``."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise DomainError("u must be nonnegative")
    out = np.exp(f.log_laplace(u))
    return out if np.ndim(out) else float(out)


def dlog_laplace(f, u):
    """Derivative of ``log phi`` at ``u`` (strictly negative)."""
    out = f.dlog_laplace(u)
    return out if np.ndim(out) else float(out)


def inv_laplace(f, s):
    """The unique ``u >= 0`` with ``phi(u) = s`` for ``s`` in ``(0, 1]``."""
    s = np.asarray(s, dtype=float)
    if np.any(~((s > 0) & (s <= 1))):
        raise DomainError("s must lie in (0, 1]")
    out = np.maximum(f.inv_laplace_log(np.log(s)), 0.0)
    return out if np.ndim(out) else float(out)


def g_z(f, s):
    """``|D log phi|`` evaluated at ``phi^{-1}(s)``; increasing in ``s``.

    The sign is dropped because only ratios of this function are used.
    """
    s = np.asarray(s, dtype=float)
    return -f.dlog_laplace(inv_laplace(f, s))


def _g_from_cumhaz(f, cumhaz):
    # g(exp(-L)) evaluated in log space so large L does not underflow
    return -f.dlog_laplace(f.inv_laplace_log(-np.asarray(cumhaz, dtype=float)))


# ---------------------------------------------------------------------------
# Marginal change-point model
# ---------------------------------------------------------------------------


def _as_cumhaz(baseline):
    if isinstance(baseline, (int, float, np.floating)):
        if baseline <= 0:
            raise DomainError("baseline rate must be positive")
        return PiecewiseLinearCumHaz.constant(float(baseline))
    if isinstance(baseline, (PiecewiseLinearCumHaz, StepFunction)) or callable(baseline):
        return baseline
    raise DomainError(f"unsupported baseline {baseline!r}")


@dataclass(frozen=True, eq=False)
class MarginalModel:
    """Hazard ratio ``exp(beta1)`` on ``(0, nu]`` and ``exp(beta2)`` after.

    ``baseline`` is a constant rate, a :class:`PiecewiseLinearCumHaz`, or a
    cumulative-hazard :class:`StepFunction` such as a Breslow estimate.
    ``nu = inf`` gives the ordinary Cox model.
    """

    beta1: float
    beta2: float = 0.0
    nu: float = math.inf
    baseline: object = 1.0

    def __post_init__(self):
        if not self.nu > 0:
            raise DomainError("nu must be positive")
        object.__setattr__(self, "baseline", _as_cumhaz(self.baseline))

    @classmethod
    def from_fit(cls, fit):
        """From a :class:`CoxFit` (arm coefficient) or :class:`ChangePointCoxFit`."""
        if hasattr(fit, "beta1"):
            return cls(fit.beta1, fit.beta2, fit.nu, fit.baseline_cumhaz)
        b = fit.coef("arm")
        return cls(b, b, math.inf, fit.baseline_cumhaz)

    def cumhaz0(self, t):
        return np.asarray(self.baseline(np.asarray(t, dtype=float)), dtype=float)

    def cumhaz(self, t, a):
        """Marginal cumulative hazard ``Lambda(t; a)``."""
        t = np.asarray(t, dtype=float)
        a = np.asarray(a, dtype=float)
        early = np.minimum(t, self.nu)
        L_early = self.cumhaz0(early)
        L_late = self.cumhaz0(t) - L_early
        return np.exp(self.beta1 * a) * L_early + np.exp(self.beta2 * a) * L_late

    def hazard_ratio(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t <= self.nu, math.exp(self.beta1), math.exp(self.beta2))

    def inverse_cumhaz(self, u, a):
        """Event time at which ``Lambda(t; a)`` reaches ``u`` (``inf`` if never)."""
        u = np.asarray(u, dtype=float)
        a = np.broadcast_to(np.asarray(a, dtype=float), u.shape)
        if math.isinf(self.nu):
            return self._inv0(u * np.exp(-self.beta1 * a))
        L_nu = float(self.cumhaz0(self.nu))
        cut = np.exp(self.beta1 * a) * L_nu
        early = u <= cut
        out = np.empty_like(u)
        out[early] = self._inv0(u[early] * np.exp(-self.beta1 * a[early]))
        late = ~early
        out[late] = self._inv0(L_nu + (u[late] - cut[late]) * np.exp(-self.beta2 * a[late]))
        return out

    def _inv0(self, v):
        out = np.zeros_like(v)
        pos = v > 0
        finite = pos & np.isfinite(v)
        if finite.any():
            out[finite] = inverse_cumulative(self.baseline, v[finite])
        out[pos & ~np.isfinite(v)] = np.inf
        return out


def conditional_cumhaz(m: MarginalModel, f, a, t):
    """Frailty-free cumulative hazard ``phi^{-1}(exp(-Lambda(t; a)))``."""
    out = f.inv_laplace_log(-m.cumhaz(t, a))
    return out if np.ndim(out) else float(out)


def _hrz_gamma_closed(m: MarginalModel, theta, t):
    t = np.asarray(t, dtype=float)
    e1, e2 = math.exp(m.beta1), math.exp(m.beta2)
    L_early = m.cumhaz0(np.minimum(t, m.nu))
    L_late = m.cumhaz0(t) - L_early
    before = e1 * np.exp(theta * L_early * (e1 - 1))
    after = e2 * np.exp(theta * L_early * (e1 - 1) + theta * L_late * (e2 - 1))
    return np.where(t <= m.nu, before, after)


def _hrz_g_route(m: MarginalModel, f, t):
    t = np.asarray(t, dtype=float)
    return m.hazard_ratio(t) * _g_from_cumhaz(f, m.cumhaz(t, 0)) / _g_from_cumhaz(f, m.cumhaz(t, 1))


def hrz_curve(m: MarginalModel, f, tgrid, route="auto"):
    """Conditional (fixed-frailty) hazard ratio ``HR_Z(t)`` on ``tgrid``.

    ``route="closed"`` evaluates the Gamma piecewise closed form,
    ``route="g"`` the general Laplace-transform route, which works for any
    frailty; ``"auto"`` picks the closed form for Gamma frailty.
    """
    tgrid = np.asarray(tgrid, dtype=float)
    if np.any(tgrid < 0):
        raise DomainError("tgrid must be nonnegative")
    if route == "auto":
        route = "closed" if isinstance(f, GammaFrailty) else "g"
    if route == "closed":
        if not isinstance(f, GammaFrailty):
            raise DomainError("closed form is only available for Gamma frailty")
        return _hrz_gamma_closed(m, f.theta, tgrid)
    if route == "g":
        return _hrz_g_route(m, f, tgrid)
    raise ValueError(f"unknown route {route!r}")


def selection_curve(m: MarginalModel, f, a, tgrid):
    """``E(Z | T > t, A = a)``, the mean frailty among survivors of arm ``a``."""
    lam_star = f.inv_laplace_log(-m.cumhaz(np.asarray(tgrid, dtype=float), a))
    return -f.dlog_laplace(lam_star)


def selection_ratio(m: MarginalModel, f, tgrid):
    return selection_curve(m, f, 1, tgrid) / selection_curve(m, f, 0, tgrid)


def conditional_hazard_dgp(m: MarginalModel, f, n, seed=None) -> PotentialOutcomes:
    """Draw ``(Z, A, T0, T1)`` so that the marginal model ``m`` holds exactly.

    Given ``Z``, ``T^a`` has cumulative hazard ``Z * Lambda*(t; a)``. Drawing
    ``E ~ Exp(1)`` and solving ``Z * Lambda*(T; a) = E`` is equivalent to
    ``Lambda(T; a) = -log phi(E / Z)``, which only needs the marginal inverse.
    ``T0`` and ``T1`` use independent exponentials, so they are conditionally
    independent given ``Z``; ``A ~ Bernoulli(1/2)``.
    """
    rng = make_rng(seed)
    z = f.sample(rng, n)
    a = (rng.random(n) < 0.5).astype(np.int8)
    times = []
    for arm in (0, 1):
        e = rng.exponential(size=n)
        with np.errstate(divide="ignore"):
            u = -f.log_laplace(e / z)
        times.append(m.inverse_cumhaz(u, arm))
    return PotentialOutcomes(times[0], times[1], z, a)
