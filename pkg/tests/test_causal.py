import math
import warnings

import numpy as np
import pytest
from scipy import stats

from hazardlens.core import DomainError, SurvivalData
from hazardlens.estimate import cox_fit, kaplan_meier
from hazardlens.causal import (
    AdditiveHazard,
    GammaShared,
    SensitivityInput,
    SharedAdditive,
    TwoLevel,
    causal_hr_closed,
    causal_hr_from_coxfit,
    causal_hr_mc,
    cox_selection_check,
    default_bandwidth,
    gamma_coupling_sensitivity,
    gen_coupled,
    gen_two_level,
    hazard_difference_causal,
    kendall_tau,
    parse_sr,
    sensitivity_sr,
    shared_additive_contrast,
    stratum_baseline_hazard,
    tau_from_theta,
    theta_from_tau,
)
from hazardlens.frailty import DiscreteFrailty, GammaFrailty, MarginalModel, conditional_hazard_dgp, hrz_curve

LOG_HALF = math.log(0.5)


def _observed(po):
    finite = np.isfinite(po.t_obs)
    return SurvivalData(np.where(finite, po.t_obs, 1e6), finite.astype(np.int8), po.a)


class TestGenerators:
    def test_gamma_shared_marginal(self):
        po = gen_coupled(GammaShared(LOG_HALF, 0.5), 20000, seed=1)
        assert stats.kstest(po.t0, "expon").statistic < 0.02
        assert stats.kstest(po.t1, "expon", args=(0, 2.0)).statistic < 0.02

    def test_gamma_shared_conditional_distribution(self):
        # given Z, T^a has cumulative hazard Z (exp(theta e^{beta a} t) - 1) / theta
        theta = 1.0
        po = gen_coupled(GammaShared(LOG_HALF, theta), 100000, seed=2)
        z = np.asarray(po.z)
        for a, times in ((0, po.t0), (1, po.t1)):
            r = theta * math.exp(LOG_HALF * a)
            for t in (0.2, 0.5, 1.0, 2.0):
                p = np.exp(-z * math.expm1(r * t) / theta)
                stat = (np.sum(times > t) - p.sum()) / math.sqrt(np.sum(p * (1 - p)))
                assert abs(stat) < 3

    def test_gamma_shared_conditional_hazard_in_strata(self):
        theta = 1.0
        po = gen_coupled(GammaShared(LOG_HALF, theta), 400000, seed=3)
        z = np.asarray(po.z)
        h = 0.05
        for lo, hi in ((0.2, 0.4), (0.9, 1.1), (2.0, 2.5)):
            sel = (z >= lo) & (z < hi)
            for a, times in ((0, po.t0), (1, po.t1)):
                r = theta * math.exp(LOG_HALF * a)
                for t in (0.1, 0.5):
                    risk = sel & (times >= t)
                    x = times[risk]
                    d = np.sum(x < t + h)
                    e = np.sum(np.minimum(x, t + h) - t)
                    # hazard Z exp(beta a + theta e^{beta a} s), averaged over the risk set and bin
                    s = t + h / 2
                    truth = np.mean(z[risk]) * math.exp(LOG_HALF * a + r * s)
                    assert abs(d / e - truth) < 3 * math.sqrt(d) / e + 0.02 * truth

    def test_gamma_shared_independent_limit(self):
        assert abs(kendall_tau(gen_coupled(GammaShared(LOG_HALF, 1e-8), 100000, seed=4))) < 0.01

    def test_deterministic_across_workers(self):
        spec = GammaShared(LOG_HALF, 0.5)
        a = gen_coupled(spec, 150000, seed=5, workers=1)
        b = gen_coupled(spec, 150000, seed=5, workers=3)
        assert np.array_equal(a.t0, b.t0) and np.array_equal(a.a, b.a)

    def test_generator_seed(self):
        g1 = gen_coupled(GammaShared(LOG_HALF, 0.5), 100, np.random.default_rng(1))
        g2 = gen_coupled(GammaShared(LOG_HALF, 0.5), 100, np.random.default_rng(1))
        assert np.array_equal(g1.t1, g2.t1)

    def test_n_positive(self):
        with pytest.raises(DomainError):
            gen_coupled(GammaShared(LOG_HALF, 0.5), 0)

    @pytest.mark.parametrize("theta2", [1.0, 2.5])
    def test_two_level_cox_recovery(self, theta2):
        po = gen_two_level(LOG_HALF, 1.0, 20000, seed=6, theta2=theta2)
        fit = cox_fit(_observed(po))
        assert abs(fit.coef() - LOG_HALF) < 3 * fit.se[0]

    def test_two_level_non_collapsible(self):
        po = gen_two_level(LOG_HALF, 1.0, 40000, seed=7)
        z1 = np.asarray(po.z)[:, 0]
        top = z1 >= np.quantile(z1, 0.75)
        data = _observed(po)
        fit = cox_fit(data.subset(top))
        assert abs(fit.coef() - LOG_HALF) > 3 * fit.se[0]

    def test_two_level_degenerate_z2(self):
        # with Z2 degenerate the generator is the conditional-hazard model with Gamma(1) frailty
        po = gen_coupled(TwoLevel(LOG_HALF, 1.0, 1e-10), 50000, seed=8)
        m = MarginalModel(LOG_HALF, LOG_HALF, math.inf, 1.0)
        ref = conditional_hazard_dgp(m, GammaFrailty(1.0), 50000, seed=8)
        assert stats.ks_2samp(po.t1, ref.t1).pvalue > 0.001
        assert stats.ks_2samp(po.t0, ref.t0).pvalue > 0.001

    def test_shared_additive_structure(self):
        po = gen_coupled(SharedAdditive(0.5, LOG_HALF), 1000, seed=9)
        z = np.asarray(po.z)
        assert np.all(po.t0 >= z) and np.all(po.t1 * 0.5 >= z - 1e-12)

    def test_shared_additive_alpha_range(self):
        with pytest.raises(DomainError):
            SharedAdditive(1.0, 0.0)

    def test_additive_negative_hazard(self):
        spec = AdditiveHazard(psi=lambda t: np.full_like(np.asarray(t, float), -2.0),
                              omega=lambda t, z: np.broadcast_to(z, np.broadcast(t, z).shape).astype(float),
                              frailty=DiscreteFrailty((0.5, 1.5), (0.5, 0.5)),
                              cum_psi=lambda t: -2.0 * np.asarray(t, float),
                              cum_omega=lambda t, z: np.asarray(t, float) * z)
        with pytest.raises(DomainError, match="negative hazard"):
            gen_coupled(spec, 100, seed=1)

    def test_additive_quadrature_matches_closed_form(self):
        closed = AdditiveHazard.linear(0.1)
        quad = AdditiveHazard(closed.psi, closed.omega, closed.frailty)
        a = gen_coupled(closed, 2000, seed=10)
        b = gen_coupled(quad, 2000, seed=10)
        np.testing.assert_allclose(a.t1, b.t1, rtol=1e-9)


class TestKendall:
    def test_matches_scipy_with_ties(self):
        rng = np.random.default_rng(11)
        x = rng.integers(0, 20, 3000).astype(float)
        y = x + rng.integers(0, 10, 3000)
        assert kendall_tau(x, y) == pytest.approx(stats.kendalltau(x, y).statistic, abs=1e-12)

    def test_comonotone(self):
        t0 = np.random.default_rng(12).exponential(size=500)
        assert kendall_tau(t0, 2 * t0) == pytest.approx(1.0)

    def test_theta_tau(self):
        assert theta_from_tau(0.0) == 0.0
        assert theta_from_tau(0.5) == pytest.approx(2.0)
        assert tau_from_theta(theta_from_tau(0.3)) == pytest.approx(0.3)
        with pytest.raises(DomainError):
            theta_from_tau(1.0)

    @pytest.mark.parametrize("theta", [0.1, 0.5, 2.0])
    def test_gamma_shared(self, theta):
        assert abs(kendall_tau(gen_coupled(GammaShared(LOG_HALF, theta), 100000, seed=13)) - theta / (theta + 2)) < 0.02

    @pytest.mark.parametrize("backend", ["numpy", "numba"])
    def test_backends(self, backend):
        from hazardlens import _kernels
        if backend not in _kernels.BACKENDS:
            pytest.skip("numba not installed")
        po = gen_coupled(GammaShared(LOG_HALF, 0.5), 5000, seed=14)
        assert kendall_tau(po, backend=backend) == pytest.approx(stats.kendalltau(po.t0, po.t1).statistic, abs=1e-12)


class TestCausalHr:
    def test_closed_form_values(self):
        assert causal_hr_closed(LOG_HALF, 3.0, 0.0) == pytest.approx(0.5)
        np.testing.assert_allclose(causal_hr_closed(LOG_HALF, 0.0, np.linspace(0, 5, 11)), 0.5)
        assert causal_hr_closed(LOG_HALF, 0.5, 2.0) == pytest.approx(0.5 * math.exp(-0.5))
        assert causal_hr_closed(LOG_HALF, 0.5, 2.0) == pytest.approx(0.3033, abs=5e-5)

    def test_closed_form_monotone(self):
        hr = causal_hr_closed(LOG_HALF, 0.7, np.linspace(0, 5, 101))
        assert np.all(np.diff(hr) <= 0)

    def test_closed_form_equals_hrz(self):
        # shared Gamma frailty: the causal ratio equals the conditional one
        t = np.linspace(0, 3, 31)
        m = MarginalModel(LOG_HALF, LOG_HALF, math.inf, 1.0)
        np.testing.assert_allclose(hrz_curve(m, GammaFrailty(0.5), t), causal_hr_closed(LOG_HALF, 0.5, t), rtol=1e-12)

    def test_mc_matches_closed(self):
        po = gen_coupled(GammaShared(LOG_HALF, 0.5), 500000, seed=15)
        c = causal_hr_mc(po, [0.5, 1.0, 2.0], bandwidth=0.05)
        z = (c.estimate - causal_hr_closed(LOG_HALF, 0.5, c.times)) / c.se
        assert np.all(np.abs(z) < 3)

    def test_mc_independent_arms(self):
        po = gen_coupled(GammaShared(LOG_HALF, 0.0), 200000, seed=16)
        c = causal_hr_mc(po, [0.0, 0.5, 1.0])
        assert np.all(np.abs(c.estimate - 0.5) < 3 * c.se)

    def test_crude_form_available(self):
        po = gen_coupled(GammaShared(LOG_HALF, 0.5), 100000, seed=17)
        ex = causal_hr_mc(po, [0.5], bandwidth=0.05)
        crude = causal_hr_mc(po, [0.5], bandwidth=0.05, exposure=False)
        assert crude.estimate[0] != ex.estimate[0]
        assert abs(crude.estimate[0] - ex.estimate[0]) < 2 * ex.se[0]

    def test_flags_thin_strata(self):
        po = gen_coupled(GammaShared(LOG_HALF, 0.5), 2000, seed=18)
        c = causal_hr_mc(po, [0.0, 20.0], bandwidth=0.1)
        assert not c.flagged[0] and c.flagged[1]
        assert np.isnan(c.estimate[1])

    def test_bad_bandwidth(self):
        po = gen_coupled(GammaShared(LOG_HALF, 0.5), 500, seed=19)
        with pytest.raises(DomainError):
            causal_hr_mc(po, [0.0], bandwidth=0.0)

    def test_default_bandwidth_event_count(self):
        po = gen_coupled(GammaShared(LOG_HALF, 0.5), 100000, seed=20)
        grid = [0.0, 0.5, 1.0]
        h = default_bandwidth(po, grid)
        s = np.minimum(po.t0, po.t1) >= 1.0
        assert np.sum(po.t1[s] < 1.0 + h) >= 50 and np.sum(po.t0[s] < 1.0 + h) >= 50

    def test_from_coxfit(self):
        fit = cox_fit(_observed(gen_coupled(GammaShared(LOG_HALF, 0.0), 5000, seed=21)))
        tg = np.linspace(0, 2, 5)
        curve = causal_hr_from_coxfit(fit, 0.5, tg)
        expected = math.exp(fit.coef()) * np.exp(0.5 * fit.baseline_cumhaz(tg) * (math.exp(fit.coef()) - 1))
        np.testing.assert_allclose(curve, expected)

    def test_csv(self, tmp_path):
        po = gen_coupled(GammaShared(LOG_HALF, 0.5), 20000, seed=22)
        path = tmp_path / "hr.csv"
        causal_hr_mc(po, [0.0, 0.5]).to_csv(path)
        assert path.read_text().splitlines()[0] == "t,estimate,se,lo,hi,n_stratum,flagged"

    def test_pairs_csv(self, tmp_path):
        po = gen_coupled(GammaShared(LOG_HALF, 0.5), 10, seed=23)
        path = tmp_path / "pairs.csv"
        po.to_csv(path)
        assert path.read_text().splitlines()[0] == "id,t0,t1,z,a,t_obs"


class TestSensitivity:
    def test_identity(self):
        grid = np.linspace(0, 4, 9)
        obs = lambda t: 0.5 + 0.1 * np.asarray(t)
        r = sensitivity_sr(SensitivityInput(obs, lambda t: np.exp(-0.3 * t), lambda t: np.exp(-0.2 * t)), grid)
        assert np.array_equal(r.causal_hr, r.obs_hr)

    def test_worked_value(self):
        r = sensitivity_sr(SensitivityInput(0.8, 0.9, 1.0, 1.5), [0.0])
        assert r.causal_hr[0] == pytest.approx(0.8 / (0.9 + 1.5 * 0.1), abs=1e-12)
        assert r.causal_hr[0] == pytest.approx(0.7619, abs=5e-5)

    def test_sr_above_one_strengthens(self):
        grid = np.linspace(0, 4, 9)
        r = sensitivity_sr(SensitivityInput(0.8, lambda t: np.exp(-0.3 * t), lambda t: np.exp(-0.2 * t),
                                            parse_sr("piecewise:0=1,1=1.5,2=2")), grid)
        assert np.all(r.causal_hr <= 0.8 + 1e-15)

    def test_pi_clipped(self):
        with pytest.warns(RuntimeWarning):
            r = sensitivity_sr(SensitivityInput(0.8, 0.9, 0.8, 1.5), [1.0])
        assert r.pi[0] == 1.0

    def test_survival_range(self):
        with pytest.raises(DomainError):
            sensitivity_sr(SensitivityInput(0.8, 0.0, 1.0), [1.0])

    def test_km_input(self):
        po = gen_coupled(GammaShared(LOG_HALF, 0.5), 3000, seed=24)
        data = _observed(po)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            r = sensitivity_sr(SensitivityInput(0.5, kaplan_meier(data, 0), kaplan_meier(data, 1), 2.0),
                               [0.5, 1.0])
        assert np.all(np.isfinite(r.causal_hr))

    def test_parse_sr(self, tmp_path):
        assert parse_sr("const:1.5")(3.0) == 1.5
        f = parse_sr("piecewise:0=1,2=1.5")
        assert f(1.0) == 1.0 and f(2.0) == 1.5
        path = tmp_path / "sr.csv"
        path.write_text("t,sr\n0,1\n1,2\n")
        assert parse_sr(str(path))(1.5) == 2.0
        for bad in ("const:-1", "piecewise:1=1", "const:x", str(tmp_path / "missing.csv")):
            with pytest.raises(DomainError):
                parse_sr(bad)

    def test_gamma_coupling_ordered(self):
        m = MarginalModel(-0.3, -0.3, math.inf, 0.1)
        fit = cox_fit(_observed(conditional_hazard_dgp(m, GammaFrailty(0.5), 2000, seed=25)))
        assert fit.coef() < 0
        curves = gamma_coupling_sensitivity(fit, (0.1, 0.2, 0.3), np.linspace(0, 10, 21))
        c = np.array([curves[k] for k in (0.1, 0.2, 0.3)])
        assert np.all(c <= math.exp(fit.coef()) + 1e-15)
        assert np.all(np.diff(c[:, 1:], axis=0) < 0)


class TestHazardDifference:
    def test_stratum_baseline_closed_form(self):
        t = np.linspace(0, 3, 13)
        expected = (0.25 * np.exp(-t) + 0.75 * np.exp(-3 * t)) / (0.5 * np.exp(-t) + 0.5 * np.exp(-3 * t))
        np.testing.assert_allclose(stratum_baseline_hazard(AdditiveHazard.linear(0.1), t), expected, rtol=1e-12)

    def test_stratum_baseline_gamma(self):
        # Gamma(k, theta): E[Z e^{-2tZ}] / E[e^{-2tZ}] = 1 / (1 + 2 theta t)
        spec = AdditiveHazard.linear(0.1, GammaFrailty(0.5))
        t = np.linspace(0, 3, 7)
        np.testing.assert_allclose(stratum_baseline_hazard(spec, t), 1 / (1 + t), rtol=1e-10)

    def test_agreement(self):
        r = hazard_difference_causal(AdditiveHazard.linear(0.1), [0.2, 0.5, 1.0], 50000, seed=26)
        assert np.all(np.abs(r.psi_mc - 0.1) < 3 * r.psi_mc_se)
        assert np.all(np.abs(r.psi_aalen - 0.1) < 3 * r.psi_aalen_se)
        assert np.all(np.abs(r.baseline_mc - r.baseline_true) < 0.1)

    def test_null(self):
        r = hazard_difference_causal(AdditiveHazard.linear(0.0), [0.2, 0.5, 1.0], 50000, seed=27)
        assert np.all(np.abs(r.psi_mc) < 3 * r.psi_mc_se)
        assert np.all(np.abs(r.psi_aalen) < 3 * r.psi_aalen_se)


class TestCoxSelection:
    def test_values(self):
        r = cox_selection_check(-math.log(2), 0.4, 100000, seed=28, tgrid=(0.0, 2.0))
        np.testing.assert_allclose(r.analytic[0], [1.0, 1.0])
        assert r.analytic[1, 1] == pytest.approx(1.4)
        assert np.all(np.abs(r.empirical - r.analytic) < 3 * r.se)

    def test_minimum_n(self):
        with pytest.raises(DomainError):
            cox_selection_check(0.0, n=10)


def test_shared_additive_contrast():
    r = shared_additive_contrast(0.5, LOG_HALF, 500000, seed=29)
    assert r.max_gap > 3
    assert r.mc.estimate[0] < 1
    assert np.isfinite(r.max_ph_deviation)
