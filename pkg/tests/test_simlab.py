import math

import numpy as np
import pytest

from hazardlens.core import DomainError, PotentialOutcomes, read_dataset
from hazardlens.simlab import (
    ConfigError,
    ExperimentError,
    bundled_configs,
    calibrate_fig9_baseline,
    fig9_curve,
    load_config,
    parse_config,
    run_experiment,
    write_svg,
)
from hazardlens.simlab.censoring import (
    AdminCensoring,
    MixedCensoring,
    NoCensoring,
    UniformCensoring,
    apply_censoring,
    censor_times,
)
from hazardlens.simlab.config import ExperimentConfig

BUNDLED = ("sim31", "fig1", "fig2", "fig3", "fig4", "fig6-shape", "fig9-shape")


def _cfg(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return load_config(str(path))


class TestConfig:
    def test_bundled_present(self):
        assert set(BUNDLED) <= set(bundled_configs())

    @pytest.mark.parametrize("name", BUNDLED)
    def test_bundled_load(self, name):
        assert load_config(name).name == name

    def test_comments_and_blanks(self):
        entries = parse_config("# header\n\nname = x  # trailing\n")
        assert entries == {"name": ("x", 3)}

    @pytest.mark.parametrize(
        "text, line, fragment",
        [
            ("name = a\nname = b\n", 2, "duplicate"),
            ("name = a\nbogus = 1\n", 2, "unknown key"),
            ("name = a\n\nn = -3\n", 3, "'n'"),
            ("name = a\njust text\n", 2, "key = value"),
            ("name = a\ncensoring = weird\n", 2, "censoring"),
            ("name = a\nestimators = cox, nope\n", 2, "nope"),
            ("name = a\nfrailty = discrete:0.2@0.5,1@0.6\n", 2, "frailty"),
            ("name = a\ntgrid = 0:1\n", 2, "tgrid"),
        ],
    )
    def test_errors_carry_line(self, tmp_path, text, line, fragment):
        with pytest.raises(ConfigError) as info:
            _cfg(tmp_path, text)
        assert info.value.line == line
        assert fragment in str(info.value)
        assert f"exp.cfg:{line}:" in str(info.value)

    def test_missing_name(self, tmp_path):
        with pytest.raises(ConfigError, match="name"):
            _cfg(tmp_path, "n = 3\n")

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config("does-not-exist")

    def test_log_values(self):
        cfg = load_config("sim31")
        assert cfg.params["beta1"] == pytest.approx(-math.log(2))
        assert isinstance(cfg.censoring, MixedCensoring)

    def test_overrides(self):
        cfg = load_config("sim31", seed=9, n=100)
        assert cfg.seed == 9 and cfg.n == 100

    def test_override_validated(self):
        with pytest.raises(ConfigError):
            load_config("sim31", replicates=0)


class TestCensoring:
    def _outcomes(self, n=1000, seed=0):
        rng = np.random.default_rng(seed)
        t = rng.exponential(size=n)
        return PotentialOutcomes(t, t, np.ones(n), np.zeros(n, np.int8))

    def test_none(self):
        data = apply_censoring(self._outcomes(), NoCensoring(), seed=1)
        assert np.all(data.status == 1)

    def test_admin_zero(self):
        data = apply_censoring(self._outcomes(), AdminCensoring(0.0), seed=1)
        assert np.all(data.status == 0) and np.all(data.time == 0)

    def test_event_at_censoring_time_is_event(self):
        time, status = censor_times([2.0, 3.0], AdminCensoring(2.0))
        assert status.tolist() == [1, 0] and time.tolist() == [2.0, 2.0]

    def test_uniform_fraction(self):
        # P(Exp(1) > U(0, 4)) = (1 - e^{-4}) / 4
        data = apply_censoring(self._outcomes(200000, 2), UniformCensoring(4.0), seed=3)
        assert abs(1 - data.status.mean() - (1 - math.exp(-4)) / 4) < 0.005

    def test_mixed_scheme_fraction(self):
        report = run_experiment(load_config("sim31", seed=5))
        assert abs(report.replicates[0]["censoring_fraction"] - 0.19) <= 0.02

    def test_infinite_times_need_censoring(self):
        with pytest.raises(DomainError):
            censor_times([np.inf], NoCensoring())

    def test_validation(self):
        with pytest.raises(DomainError):
            MixedCensoring(10, 8, 1.5)
        with pytest.raises(DomainError):
            UniformCensoring(0.0)
        with pytest.raises(DomainError):
            AdminCensoring(-1.0)


class TestRunner:
    def test_sim31_report(self):
        report = run_experiment(load_config("sim31"))
        s = report.replicates[0]["scalars"]
        assert -0.72 <= s["coxcp.beta1"] <= -0.62
        assert {"hrz", "selection", "aalen_arm"} <= set(report.curves)
        agg = report.aggregates["coxcp.beta1"]
        assert agg["truth"] == pytest.approx(-math.log(2))

    @pytest.mark.parametrize("name", BUNDLED)
    def test_bundled_run(self, name, tmp_path):
        report = run_experiment(load_config(name))
        paths = report.write(tmp_path, svg=True)
        assert (tmp_path / "report.json").exists()
        assert all(p.endswith((".json", ".csv", ".svg")) for p in paths)

    def test_same_seed_same_bytes(self):
        cfg = load_config("sim31", replicates=2, n=3000)
        assert run_experiment(cfg).to_json() == run_experiment(cfg).to_json()

    def test_workers_do_not_change_report(self):
        cfg = load_config("sim31", replicates=3, n=3000)
        assert run_experiment(cfg, workers=1).to_json() == run_experiment(cfg, workers=3).to_json()

    def test_replicates_differ(self):
        report = run_experiment(load_config("sim31", replicates=2, n=3000))
        b = [r["scalars"]["coxcp.beta1"] for r in report.replicates]
        assert b[0] != b[1]

    def test_dataset_written(self, tmp_path):
        report = run_experiment(load_config("sim31", n=500))
        report.write(tmp_path, svg=False)
        header = (tmp_path / "dataset.csv").read_text().splitlines()[0].split(",")
        assert header[:4] == ["id", "time", "status", "arm"]
        assert {"z", "t0", "t1"} <= set(header)
        assert len(read_dataset(tmp_path / "dataset.csv")) == 500

    def test_csv_format(self, tmp_path):
        run_experiment(load_config("sim31", n=500)).write(tmp_path, fmt="csv", svg=False)
        assert (tmp_path / "report.csv").read_text().startswith("key,mean,sd,n,truth,coverage")

    def test_failed_replicates_recorded(self, tmp_path):
        # nu beyond follow-up leaves beta2 unidentified in every replicate
        cfg = _cfg(tmp_path, "name = x\ndgp = changepoint\nbeta1 = -0.5\nnu = 100\nlambda0 = 1\n"
                             "n = 200\ncensoring = admin:5\nestimators = coxcp\nreplicates = 2\n")
        with pytest.raises(ExperimentError):
            run_experiment(cfg)

    def test_partial_failure_continues(self, tmp_path):
        # tiny samples: some replicates lose all events in one arm before the change point
        cfg = _cfg(tmp_path, "name = x\ndgp = changepoint\nbeta1 = -0.5\nbeta2 = 0\nnu = 1\nlambda0 = 0.3\n"
                             "n = 6\ncensoring = admin:3\nestimators = coxcp\nreplicates = 40\n")
        report = run_experiment(cfg)
        errors = [r for r in report.replicates if "error" in r]
        assert 0 < len(errors) < 40
        assert report.aggregates["coxcp.beta1"]["n"] == 40 - len(errors)

    def test_fig3_ordering(self):
        report = run_experiment(load_config("fig3"))
        _, cols = report.curves["causal_closed"]
        curves = np.array(cols[1:])
        assert np.allclose(curves[:, 0], 0.5)
        assert np.all(np.diff(curves[:, 1:], axis=0) < 0)

    def test_sd_shrinks_with_n(self, tmp_path):
        text = ("name = sd\ndgp = changepoint\nfrailty = gamma:0.5\nbeta1 = -0.5\nlambda0 = 1\n"
                "censoring = uniform:3\nestimators = cox\nreplicates = 200\nseed = 4\n")
        small = run_experiment(_cfg(tmp_path, text + "n = 2000\n", "a.cfg"))
        large = run_experiment(_cfg(tmp_path, text + "n = 20000\n", "b.cfg"))
        ratio = small.aggregates["cox.beta"]["sd"] / large.aggregates["cox.beta"]["sd"]
        assert 2.5 <= ratio <= 3.8
        # model-based SEs cover the truth at about the nominal rate
        assert 0.9 <= large.aggregates["cox.beta"]["coverage"] <= 0.99


class TestFig9:
    def test_no_frailty_flat(self):
        t = np.linspace(0, 720, 241)
        hr = fig9_curve(math.log(2.4), math.log(0.78), 365, 0.001, 0.0, t)
        np.testing.assert_allclose(hr[t <= 365], 2.4)
        np.testing.assert_allclose(hr[t > 365], 0.78)

    def test_start_value(self):
        hr = fig9_curve(math.log(2.4), math.log(0.78), 365, 0.001, 0.3, [0.0])
        assert hr[0] == pytest.approx(2.4)

    def test_calibrated_shape(self):
        rate = calibrate_fig9_baseline(math.log(2.4), 365, 0.3, 3.7)
        t = np.linspace(0, 720, 241)
        hr = fig9_curve(math.log(2.4), math.log(0.78), 365, rate, 0.3, t)
        assert np.all(hr[t <= 365] >= 2.4) and hr[t == 360][0] < 3.7
        assert float(fig9_curve(math.log(2.4), math.log(0.78), 365, rate, 0.3, [365.0])[0]) == pytest.approx(3.7)
        assert np.all(hr[t > 365] > 1)

    def test_bad_tau(self):
        with pytest.raises(DomainError):
            fig9_curve(0.1, 0.1, 1, 1.0, 1.0, [0.0])


def test_write_svg(tmp_path):
    p = tmp_path / "a.svg"
    write_svg(p, {"x<y": ([0, 1, 2], [1.0, np.nan, 3.0])}, title="t & u")
    text = p.read_text()
    assert text.startswith("<svg") and "x&lt;y" in text and "t &amp; u" in text
    assert text.count("<polyline") == 2
    with pytest.raises(DomainError):
        write_svg(p, {"a": ([0.0], [np.nan])})


def test_experiment_config_defaults():
    cfg = ExperimentConfig.from_entries({"name": ("x", 1)})
    assert cfg.replicates == 1 and cfg.dgp == "none"
