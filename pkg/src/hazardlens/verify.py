"""Oracle cross-checks run by ``hazardlens verify``.

Each check compares an implementation against an independent route (closed
form, exact sum, brute force or simulation) and passes when the
discrepancy is within ``tolerance * scale``. Setting ``scale = 0`` turns
every approximate check into a failure, which is a useful negative control.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .causal import (
    AdditiveHazard,
    GammaShared,
    SensitivityInput,
    causal_hr_closed,
    causal_hr_mc,
    cox_selection_check,
    gen_coupled,
    hazard_difference_causal,
    kendall_tau,
    sensitivity_sr,
)
from .frailty import (
    SIM31_FRAILTY,
    GammaFrailty,
    MarginalModel,
    hrz_curve,
    inv_laplace,
    laplace,
)

__all__ = ["CheckResult", "CHECKS", "run_checks"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    error: float
    tolerance: float
    detail: str
    seconds: float


def _sim31():
    return MarginalModel(-math.log(2), 0.0, 4.0, 0.4)


def check_laplace(seed, scale):
    """Laplace round trips and the marginalisation identity."""
    s = np.linspace(0.01, 0.99, 99)
    err = 0.0
    for f in (GammaFrailty(0.5), GammaFrailty(2.0), SIM31_FRAILTY):
        err = max(err, float(np.max(np.abs(laplace(f, inv_laplace(f, s)) - s))))
    # E_Z exp(-Z L*) against exp(-L) by exact atom sum
    m = _sim31()
    t = np.linspace(0, 8, 81)
    for a in (0, 1):
        L = m.cumhaz(t, a)
        Lstar = inv_laplace(SIM31_FRAILTY, np.exp(-L))
        z, p = np.array(SIM31_FRAILTY.atoms), np.array(SIM31_FRAILTY.probs)
        lhs = np.exp(-np.outer(Lstar, z)) @ p
        err = max(err, float(np.max(np.abs(lhs - np.exp(-L)))))
    return err, 1e-10, "round trip and marginalisation, Gamma and binary"


def check_gamma_routes(seed, scale):
    """Closed-form and Laplace-route conditional HR agree for Gamma frailty."""
    t = np.linspace(0, 10, 100)
    err = 0.0
    for theta in (0.3, 1.0, 3.0):
        f = GammaFrailty(theta)
        m = MarginalModel(-math.log(2), 0.2, 4.0, 0.4)
        err = max(err, float(np.max(np.abs(hrz_curve(m, f, t, "closed") - hrz_curve(m, f, t, "g")))))
    return err, 1e-9, "max abs difference on a 100-point grid"


def check_hrz_bound(seed, scale):
    """Binary-frailty conditional HR stays within the documented band."""
    hr = hrz_curve(_sim31(), SIM31_FRAILTY, np.linspace(0, 8, 801))
    err = max(0.0, 0.31 - hr.min(), hr.max() - 0.82)
    return err, 0.0, f"range [{hr.min():.4f}, {hr.max():.4f}] inside [0.31, 0.82]"


def check_kendall(seed, scale):
    """Kendall's tau of shared-Gamma pairs matches theta / (theta + 2)."""
    err = 0.0
    for theta in (0.1, 0.5, 2.0):
        p = gen_coupled(GammaShared(math.log(0.5), theta), 100000, seed)
        err = max(err, abs(kendall_tau(p) - theta / (theta + 2)))
    return err, 0.02, "n = 100000 per theta"


def check_causal_hr(seed, scale):
    """Monte Carlo principal-stratum HR against the closed form (in SE units)."""
    worst = 0.0
    for theta in (0.5, 2.0):
        p = gen_coupled(GammaShared(math.log(0.5), theta), 500000, seed)
        c = causal_hr_mc(p, [0.0, 0.5, 1.0, 2.0], 0.05)
        z = (c.estimate - causal_hr_closed(math.log(0.5), theta, c.times)) / c.se
        worst = max(worst, float(np.max(np.abs(z))))
    return worst, 3.0, "max |z| over t in {0, 0.5, 1, 2}, theta in {0.5, 2}"


def check_cox_selection(seed, scale):
    """Survivor mean of the Cox exponential variate against 1 + e^{a beta} L0(t)."""
    r = cox_selection_check(-math.log(2), 0.4, 100000, seed, (1.0, 2.0, 4.0))
    z = np.abs(r.empirical - r.analytic) / r.se
    ordered = bool(np.all(r.empirical[:, 1] < r.empirical[:, 0]))
    return float(z.max()) if ordered else math.inf, 3.0, f"max |z| {z.max():.2f}, treated below control: {ordered}"


def check_hazard_difference(seed, scale):
    """Additive model: specified psi, stratum MC difference and Aalen slope agree."""
    r = hazard_difference_causal(AdditiveHazard.linear(0.1), [0.2, 0.5, 1.0], 50000, seed)
    z1 = np.abs(r.psi_mc - r.psi_true) / r.psi_mc_se
    z2 = np.abs(r.psi_aalen - r.psi_true) / r.psi_aalen_se
    return float(max(z1.max(), z2.max())), 3.0, "max |z| of MC difference and Aalen slope"


def check_sensitivity(seed, scale):
    """Worked sensitivity value and the SR = 1 identity."""
    r = sensitivity_sr(SensitivityInput(0.8, 0.9, 1.0, 1.5), [0.0, 1.0, 2.0])
    err = float(np.max(np.abs(r.causal_hr - 0.8 / (0.9 + 1.5 * 0.1))))
    obs = lambda t: 0.5 + 0.1 * np.asarray(t)
    r1 = sensitivity_sr(SensitivityInput(obs, 0.7, 0.9, 1.0), np.linspace(0, 3, 7))
    err = max(err, float(np.max(np.abs(r1.causal_hr - r1.obs_hr))))
    return err, 1e-12, "0.8 / (0.9 + 1.5 * 0.1) and SR = 1"


def check_kernels(seed, scale):
    """Compiled and pure-numpy kernels agree."""
    if len(_kernels.BACKENDS) < 2:
        return 0.0, 0.0, "numba unavailable, skipped"
    rng = np.random.default_rng(seed)
    n = 2000
    t = np.sort(rng.exponential(size=n))
    x = np.column_stack((np.ones(n), rng.integers(0, 2, n)))
    ev = rng.random(n) < 0.7
    ev_t = np.unique(t[ev])
    a = _kernels.aalen_increments(t, x, ev, ev_t, backend="numba")
    b = _kernels.aalen_increments(t, x, ev, ev_t, backend="numpy")
    err = max(float(np.max(np.abs(a[0] - b[0]))), float(np.max(np.abs(a[1] - b[1]))))
    w = np.exp(0.3 * x[:, 1])
    r1 = _kernels.risk_set_sums(ev_t, t, w, x[:, 1:], backend="numba")
    r2 = _kernels.risk_set_sums(ev_t, t, w, x[:, 1:], backend="numpy")
    err = max(err, *(float(np.max(np.abs(p - q))) for p, q in zip(r1, r2)))
    y = rng.integers(0, 50, n)
    if _kernels.count_inversions(y, "numba") != _kernels.count_inversions(y, "numpy"):
        err = math.inf
    return err, 1e-9, "Aalen increments, risk-set sums, inversion counts"


CHECKS = {
    "laplace": check_laplace,
    "gamma_routes": check_gamma_routes,
    "hrz_bound": check_hrz_bound,
    "kendall": check_kendall,
    "causal_hr": check_causal_hr,
    "cox_selection": check_cox_selection,
    "hazard_difference": check_hazard_difference,
    "sensitivity": check_sensitivity,
    "kernels": check_kernels,
}


def run_checks(only=None, tolerance_scale=1.0, seed=0):
    """Run the selected checks (all by default) and return their results."""
    names = list(CHECKS) if not only else list(only)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown check(s): {', '.join(unknown)}; available: {', '.join(CHECKS)}")
    out = []
    for name in names:
        start = time.perf_counter()
        err, tol, detail = CHECKS[name](seed, tolerance_scale)
        tol = tol * tolerance_scale
        passed = bool(err <= tol) if tol > 0 else bool(err == 0 and tolerance_scale > 0)
        out.append(CheckResult(name, passed, float(err), float(tol), detail, time.perf_counter() - start))
    return out
