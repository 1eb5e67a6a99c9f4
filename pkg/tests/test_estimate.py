import math

import numpy as np
import pytest
from scipy import optimize

from hazardlens.core import (
    DomainError,
    EstimationError,
    PiecewiseLinearCumHaz,
    SeedSpec,
    StepFunction,
    SurvivalData,
    inverse_cumulative,
)
from hazardlens.estimate import (
    AalenFit,
    ChangePointCoxFit,
    CoxFit,
    NonIdentifiedError,
    SeparationError,
    aalen_fit,
    constant_effect,
    cox_changepoint_fit,
    cox_fit,
    kaplan_meier,
    log_survival_ratio,
    nelson_aalen,
    relative_risk,
    rmst,
    rmtl_ratio,
    rr_curve,
)
from hazardlens.frailty import SIM31_FRAILTY, MarginalModel, conditional_hazard_dgp
from hazardlens.simlab.censoring import MixedCensoring, apply_censoring


def exp_data(n, rate0, rate1, seed, censor=None):
    """Two-arm exponential data with optional uniform censoring on (0, censor)."""
    rng = SeedSpec(*seed).rng() if isinstance(seed, tuple) else SeedSpec(seed).rng()
    a = (rng.random(n) < 0.5).astype(np.int8)
    t = rng.exponential(size=n) / np.where(a == 1, rate1, rate0)
    status = np.ones(n, dtype=np.int8)
    if censor is not None:
        c = rng.uniform(0, censor, n)
        status = (t <= c).astype(np.int8)
        t = np.minimum(t, c)
    return SurvivalData(t, status, a)


def additive_data(n, base, psi, seed, censor=None):
    """Constant hazards ``base`` (control) and ``base + psi`` (treated)."""
    return exp_data(n, base, base + psi, seed, censor)


# ---------------------------------------------------------------------------
# Kaplan-Meier and Nelson-Aalen
# ---------------------------------------------------------------------------


class TestKaplanMeier:
    def test_hand_computed(self):
        km = kaplan_meier(SurvivalData([1.0, 2.0, 3.0], [1, 1, 1], [0, 0, 0]))
        assert km(1.0) == pytest.approx(2 / 3)
        assert km(2.0) == pytest.approx(1 / 3)
        assert km(3.0) == 0.0
        assert km(0.5) == 1.0

    def test_all_censored(self):
        km = kaplan_meier(SurvivalData([1.0, 2.0], [0, 0], [0, 1]))
        assert km(1.5) == 1.0
        assert km.variance(1.5) == 0.0

    def test_empty_arm(self):
        with pytest.raises(EstimationError):
            kaplan_meier(SurvivalData([1.0, 2.0], [1, 1], [0, 0]), arm=1)

    def test_empirical_survival_without_censoring(self):
        t = SeedSpec(1).rng().exponential(size=500)
        km = kaplan_meier(SurvivalData(t, np.ones(500, np.int8), np.zeros(500, np.int8)))
        grid = np.linspace(0, t.max(), 97)
        ecdf = np.array([(t > g).mean() for g in grid])
        np.testing.assert_allclose(km(grid), ecdf, atol=1e-12)

    def test_greenwood_hand(self):
        km = kaplan_meier(SurvivalData([1.0, 2.0, 3.0, 4.0], [1, 0, 1, 1], [0, 0, 0, 0]))
        # S(1) = 3/4 with variance S^2 * 1/(4*3)
        assert km.variance(1.0) == pytest.approx(0.75**2 / 12)
        # S(3) = 3/4 * 1/2
        assert km(3.0) == pytest.approx(0.375)
        assert km.variance(3.0) == pytest.approx(0.375**2 * (1 / 12 + 1 / 2))

    def test_sup_error_against_exponential(self):
        data = exp_data(20000, 0.4, 0.4, seed=2)
        km = kaplan_meier(data)
        grid = np.linspace(0, 5, 2001)
        assert np.max(np.abs(km(grid) - np.exp(-0.4 * grid))) < 0.02


def test_nelson_aalen_hand():
    na = nelson_aalen(SurvivalData([1.0, 2.0, 2.0, 3.0], [1, 1, 0, 1], [0, 0, 0, 0]))
    assert na(1.0) == pytest.approx(1 / 4)
    assert na(2.0) == pytest.approx(1 / 4 + 1 / 3)
    assert na(3.0) == pytest.approx(1 / 4 + 1 / 3 + 1)


# ---------------------------------------------------------------------------
# Cox
# ---------------------------------------------------------------------------


def breslow_neg_loglik(beta, time, status, X):
    eta = X @ beta
    ll = 0.0
    for i in np.flatnonzero(status):
        risk = time >= time[i]
        ll += eta[i] - np.log(np.sum(np.exp(eta[risk])))
    return -ll


def numeric_hessian(f, x, h=1e-4):
    p = x.size
    H = np.zeros((p, p))
    for i in range(p):
        for j in range(p):
            e_i, e_j = np.eye(p)[i] * h, np.eye(p)[j] * h
            H[i, j] = (f(x + e_i + e_j) - f(x + e_i - e_j) - f(x - e_i + e_j) + f(x - e_i - e_j)) / (4 * h * h)
    return H


class TestCox:
    def test_brute_force_oracle(self):
        rng = SeedSpec(3).rng()
        n = 300
        data = exp_data(n, 0.5, 0.3, seed=3, censor=4.0)
        data = SurvivalData(np.round(data.time, 1), data.status, data.arm,  # rounding creates ties
                            rng.normal(size=(n, 1)), covariate_names=("x",))
        fit = cox_fit(data, covariates=("arm", "x"))
        X = data.design(("arm", "x"))
        f = lambda b: breslow_neg_loglik(b, data.time, data.status, X)
        ref = optimize.minimize(f, np.zeros(2), method="BFGS", options={"gtol": 1e-10})
        np.testing.assert_allclose(fit.beta, ref.x, atol=1e-5)
        se = np.sqrt(np.diag(np.linalg.inv(numeric_hessian(f, fit.beta))))
        np.testing.assert_allclose(fit.se, se, rtol=1e-4)
        assert fit.loglik == pytest.approx(-ref.fun, abs=1e-8)

    def test_recovers_beta(self):
        fit = cox_fit(exp_data(20000, 0.4, 0.2, seed=4))
        assert abs(fit.coef() + math.log(2)) < 0.06
        assert fit.se[0] > 0
        assert np.max(np.abs(fit.score)) < 1e-6

    def test_permuted_arm_is_null(self):
        data = exp_data(5000, 0.4, 0.2, seed=5)
        arm = SeedSpec(5, 1).rng().permutation(data.arm)
        fit = cox_fit(SurvivalData(data.time, data.status, arm))
        assert abs(fit.coef()) < 3 * fit.se[0]

    def test_separation(self):
        with pytest.raises(SeparationError):
            cox_fit(SurvivalData([1.0, 2.0], [1, 0], [1, 1]))

    def test_complete_separation(self):
        # every event is a treated subject dying before all controls
        with pytest.raises(SeparationError):
            cox_fit(SurvivalData([1.0, 2.0, 3.0, 4.0], [1, 1, 0, 0], [1, 1, 0, 0]))

    def test_no_events(self):
        with pytest.raises(EstimationError):
            cox_fit(SurvivalData([1.0, 2.0], [0, 0], [0, 1]))

    def test_breslow_equals_nelson_aalen_at_zero(self):
        base = exp_data(400, 0.4, 0.4, seed=6, censor=5.0)
        # duplicating every subject into both arms makes the score vanish at 0
        data = SurvivalData(np.tile(base.time, 2), np.tile(base.status, 2),
                            np.repeat(np.array([0, 1], np.int8), len(base)))
        fit = cox_fit(data)
        assert fit.coef() == 0.0
        na = nelson_aalen(data)
        np.testing.assert_array_equal(fit.baseline_cumhaz.jump_times, na.cumhaz.jump_times)
        np.testing.assert_allclose(fit.baseline_cumhaz.values, na.cumhaz.values, rtol=1e-14, atol=0)

    def test_consistency_rate(self):
        medians = []
        for n in (500, 5000, 20000):
            err = [abs(cox_fit(exp_data(n, 0.4, 0.2, seed=(n, r))).coef() + math.log(2)) for r in range(50)]
            medians.append(np.median(err))
        assert medians[0] > medians[1] > medians[2]

    def test_round_trip_dict(self):
        fit = cox_fit(exp_data(200, 0.4, 0.2, seed=7))
        back = CoxFit.from_dict(fit.to_dict())
        np.testing.assert_array_equal(back.beta, fit.beta)
        np.testing.assert_array_equal(back.baseline_cumhaz.values, fit.baseline_cumhaz.values)


# ---------------------------------------------------------------------------
# Change-point Cox
# ---------------------------------------------------------------------------


class TestChangePoint:
    def test_plain_cox_data(self):
        data = exp_data(20000, 0.4, 0.2, seed=8, censor=10.0)
        fit = cox_changepoint_fit(data, 2.0)
        assert abs(fit.beta1 + math.log(2)) < 3 * fit.se1
        assert abs(fit.beta2 + math.log(2)) < 3 * fit.se2

    def test_degenerates_to_cox(self):
        data = exp_data(2000, 0.4, 0.2, seed=9, censor=10.0)
        fit = cox_changepoint_fit(data, data.time.max() + 1, allow_nonidentified=True)
        plain = cox_fit(data)
        assert fit.beta1 == plain.coef()
        assert fit.se1 == plain.se[0]
        assert math.isnan(fit.beta2)
        assert fit.identified == (True, False)

    def test_nonidentified_error_carries_fit(self):
        data = exp_data(500, 0.4, 0.2, seed=10)
        with pytest.raises(NonIdentifiedError) as info:
            cox_changepoint_fit(data, data.time.max() + 1)
        assert info.value.partial_fit.identified == (True, False)

    def test_bad_nu(self):
        with pytest.raises(DomainError):
            cox_changepoint_fit(exp_data(50, 1, 1, seed=1), 0.0)

    def test_episode_split_matches_brute_force(self):
        data = exp_data(150, 0.6, 0.3, seed=11, censor=4.0)
        nu = 1.0
        fit = cox_changepoint_fit(data, nu)

        def nll(b):
            ll = 0.0
            for i in np.flatnonzero(data.status):
                t = data.time[i]
                coef = b[0] if t <= nu else b[1]
                risk = data.time >= t
                ll += coef * data.arm[i] - np.log(np.sum(np.exp(coef * data.arm[risk])))
            return -ll

        ref = optimize.minimize(nll, np.zeros(2), method="BFGS", options={"gtol": 1e-10})
        np.testing.assert_allclose([fit.beta1, fit.beta2], ref.x, atol=1e-5)

    def test_round_trip_dict(self):
        fit = cox_changepoint_fit(exp_data(300, 0.4, 0.2, seed=12), 1.0)
        back = ChangePointCoxFit.from_dict(fit.to_dict())
        assert (back.beta1, back.beta2, back.nu) == (fit.beta1, fit.beta2, fit.nu)


def test_sim31_unbiased_across_seeds():
    """The change-point estimate is centred on the truth across independent draws."""
    m = MarginalModel(-math.log(2), 0.0, 4.0, 0.4)
    est, se = [], []
    for seed in range(12):
        po = conditional_hazard_dgp(m, SIM31_FRAILTY, 20000, SeedSpec(1000 + seed).rng(0))
        fit = cox_changepoint_fit(apply_censoring(po, MixedCensoring(10, 8, 0.5), SeedSpec(1000 + seed).rng(1)), 4.0)
        est.append(fit.beta1)
        se.append(fit.se1)
    est = np.array(est)
    # mean of 12 independent estimates against the truth, in units of its SE
    assert abs(est.mean() + math.log(2)) < 3 * np.mean(se) / math.sqrt(len(est))


# ---------------------------------------------------------------------------
# Aalen
# ---------------------------------------------------------------------------


class TestAalen:
    def test_recovers_linear_effect(self):
        fit = aalen_fit(additive_data(20000, 0.3, 0.1, seed=13))
        grid = np.linspace(0, 3, 301)
        assert np.max(np.abs(fit.at(grid, "arm") - 0.1 * grid)) < 0.03

    def test_equals_nelson_aalen_difference(self):
        data = additive_data(600, 0.3, 0.2, seed=14, censor=6.0)
        fit = aalen_fit(data)
        t = fit.times
        na0, na1 = nelson_aalen(data, arm=0), nelson_aalen(data, arm=1)
        # both arms are at risk throughout fit.times
        np.testing.assert_allclose(fit.at(t, "intercept"), na0(t), atol=1e-12)
        np.testing.assert_allclose(fit.at(t, "arm"), na1(t) - na0(t), atol=1e-12)

    def test_null_covariate_band(self):
        base = additive_data(4000, 0.3, 0.0, seed=15, censor=6.0)
        rng = SeedSpec(15, 1).rng()
        data = SurvivalData(base.time, base.status, base.arm, rng.normal(size=(len(base), 1)), covariate_names=("x",))
        fit = aalen_fit(data, covariates=("arm", "x"))
        med = float(np.median(data.time))
        k = np.searchsorted(fit.times, med, side="right") - 1
        lo, hi = fit.band("x")
        assert lo[k] <= 0 <= hi[k]

    def test_stops_at_rank_deficiency(self):
        data = SurvivalData([1.0, 2.0, 3.0, 4.0, 5.0], [1, 1, 1, 1, 1], [0, 1, 0, 1, 1])
        fit = aalen_fit(data)
        assert fit.stop_time == 4.0
        assert fit.times.tolist() == [1.0, 2.0, 3.0]

    def test_first_time_rank_deficient(self):
        with pytest.raises(EstimationError):
            aalen_fit(SurvivalData([1.0, 2.0], [1, 1], [1, 1]))

    def test_local_slope(self):
        fit = aalen_fit(additive_data(20000, 0.3, 0.1, seed=16))
        s, se = fit.local_slope(0.0, 2.0, "arm")
        assert abs(s - 0.1) < 3 * se


class TestConstantEffect:
    def test_exact_line(self):
        t = np.linspace(0.1, 5, 50)
        fit = AalenFit(t, np.column_stack((0.3 * t, 0.1 * t)), np.column_stack((t, t)) * 1e-4)
        r = constant_effect(fit, "arm")
        assert r.psi == pytest.approx(0.1, abs=1e-14)
        assert r.sup_stat == pytest.approx(0.0, abs=1e-14)

    def test_mc_oracle(self):
        fit = aalen_fit(additive_data(20000, 0.3, 0.1, seed=17, censor=8.0))
        r = constant_effect(fit, "arm", window=(0.0, 3.0), n_resample=500)
        assert abs(r.psi - 0.1) < 3 * r.se
        assert r.p_value > 0.01

    def test_detects_sign_switch(self):
        rng = SeedSpec(18).rng()
        n = 20000
        a = (rng.random(n) < 0.5).astype(np.int8)
        # treated hazard 0.5 before t = 2 and 0.1 after, control 0.3 throughout
        treated = PiecewiseLinearCumHaz(StepFunction([2.0], [0.5, 0.1]))
        e = rng.exponential(size=n)
        t = np.where(a == 1, inverse_cumulative(treated, e), e / 0.3)
        c = rng.uniform(0, 8, n)
        data = SurvivalData(np.minimum(t, c), (t <= c).astype(np.int8), a)
        r = constant_effect(aalen_fit(data), "arm", window=(0.0, 5.0), n_resample=500)
        assert r.p_value < 0.05

    def test_short_window(self):
        fit = aalen_fit(additive_data(200, 0.3, 0.1, seed=19))
        with pytest.raises(EstimationError):
            constant_effect(fit, "arm", window=(0.0, 1e-9))

    def test_reproducible(self):
        fit = aalen_fit(additive_data(2000, 0.3, 0.1, seed=20))
        assert constant_effect(fit, seed=3) == constant_effect(fit, seed=3)


# ---------------------------------------------------------------------------
# RMST and relative risk
# ---------------------------------------------------------------------------


class TestRmst:
    def test_no_mortality(self):
        r = rmst(StepFunction.constant(1.0), 30.0)
        assert r.rmst == 30.0 and r.rmtl == 0.0

    def test_exponential(self):
        target = (1 - math.exp(-3)) / 0.1
        assert target == pytest.approx(9.5021, abs=1e-4)
        data = exp_data(20000, 0.1, 0.1, seed=21, censor=100.0)
        r = rmst(kaplan_meier(data), 30.0)
        assert abs(r.rmst - target) < 3 * r.se
        assert r.rmtl == pytest.approx(30 - r.rmst)

    def test_fine_step_approximation(self):
        grid = np.linspace(0, 30, 300001)
        step = StepFunction(grid[1:], np.exp(-0.1 * grid))  # right endpoint heights
        assert rmst(step, 30.0).rmst == pytest.approx((1 - math.exp(-3)) / 0.1, abs=2e-4)

    def test_beyond_support(self):
        km = kaplan_meier(SurvivalData([1.0, 2.0], [1, 0], [0, 0]))
        with pytest.raises(DomainError):
            rmst(km, 3.0)

    def test_variance_matches_simulation(self):
        reps = [rmst(kaplan_meier(exp_data(400, 0.1, 0.1, seed=(22, r), censor=60.0)), 20.0) for r in range(200)]
        sd = np.std([r.rmst for r in reps], ddof=1)
        mean_se = np.mean([r.se for r in reps])
        assert 0.8 < mean_se / sd < 1.25

    def test_rmtl_ratio(self):
        data = exp_data(2000, 0.1, 0.07, seed=23, censor=60.0)
        r1 = rmst(kaplan_meier(data, arm=1), 30.0)
        r0 = rmst(kaplan_meier(data, arm=0), 30.0)
        ratio, lo, hi = rmtl_ratio(r1, r0)
        assert lo < ratio < hi
        assert ratio == pytest.approx(r1.rmtl / r0.rmtl)


class TestRelativeRisk:
    def test_closed_form(self):
        rr = relative_risk(math.exp(-0.5), math.exp(-1.0))
        assert float(rr) == pytest.approx((1 - math.exp(-0.5)) / (1 - math.exp(-1)))
        assert float(rr) == pytest.approx(0.6225, abs=1e-4)

    def test_undefined_at_zero(self):
        assert np.isnan(relative_risk(1.0, 1.0))

    def test_log_survival_ratio_ph(self):
        assert float(log_survival_ratio(math.exp(-0.5), math.exp(-1.0))) == pytest.approx(0.5)

    def test_rr_curve(self):
        data = exp_data(600, 0.3, 0.15, seed=24, censor=8.0)
        fit = cox_fit(data)
        grid = np.linspace(0.0, 5.0, 26)
        band = rr_curve(fit, grid, n_boot=200, seed=1)
        L0 = fit.baseline_cumhaz(grid)
        with np.errstate(invalid="ignore", divide="ignore"):
            plug = (1 - np.exp(-L0 * math.exp(fit.coef()))) / (1 - np.exp(-L0))
        np.testing.assert_allclose(band.estimate[1:], plug[1:], rtol=1e-12)
        assert np.isnan(band.estimate[0])
        ok = ~np.isnan(band.estimate)
        assert np.all(band.lo_pointwise[ok] <= band.estimate[ok])
        assert np.all(band.estimate[ok] <= band.hi_pointwise[ok])
        assert np.all(band.lo_uniform[ok] <= band.lo_pointwise[ok])
        assert np.all(band.hi_uniform[ok] >= band.hi_pointwise[ok])

    def test_rr_curve_null(self):
        base = exp_data(300, 0.3, 0.3, seed=25, censor=8.0)
        data = SurvivalData(np.tile(base.time, 2), np.tile(base.status, 2),
                            np.repeat(np.array([0, 1], np.int8), len(base)))
        band = rr_curve(cox_fit(data), [1.0, 2.0, 3.0], n_boot=200)
        np.testing.assert_allclose(band.estimate, 1.0, rtol=1e-12)

    def test_rr_curve_checks(self):
        fit = cox_fit(exp_data(300, 0.3, 0.15, seed=26, censor=8.0))
        with pytest.raises(DomainError):
            rr_curve(fit, [1.0], n_boot=100)
        with pytest.raises(DomainError):
            rr_curve(fit, [100.0], n_boot=200)
