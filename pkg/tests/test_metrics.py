"""Scoring: CRPS energy form, pinball, intervals, reports and their files."""

import csv
import json

import numpy as np
import pytest

from gapcast.metrics import (
    DEFAULT_LEVELS,
    DEFAULT_TAUS,
    ScoreReport,
    central_interval,
    crps_ensemble,
    crps_mean,
    pinball_loss,
    reliability,
    report_to_dict,
    score_report,
    sharpness,
    write_report_csvs,
    write_report_json,
)


class TestCrpsEnsemble:
    def test_two_point_ensemble_hand_value(self):
        # mean |x - 0| = 0.5 over {0, 1}; half the mean pairwise gap is 0.25.
        assert crps_ensemble(np.array([0.0, 1.0]), 0.0) == pytest.approx(0.25, abs=1e-10)

    def test_degenerate_ensemble_is_absolute_error(self):
        assert crps_ensemble(np.full(7, 0.4), 0.9) == pytest.approx(0.5, abs=1e-12)

    def test_matches_brier_integral(self):
        # The energy form must agree with integrating the squared gap
        # between the empirical CDF and the observation's step function.
        rng = np.random.default_rng(3)
        x = np.sort(rng.standard_normal(20))
        y = 0.3
        jumps = np.concatenate([x - 1e-9, x + 1e-9, [y - 1e-9, y + 1e-9]])
        grid = np.union1d(np.linspace(-6.0, 6.0, 10001), jumps)
        F = np.searchsorted(x, grid, side="right") / x.size
        H = (grid >= y).astype(np.float64)
        integral = np.trapezoid((F - H) ** 2, grid)
        assert crps_ensemble(x, y) == pytest.approx(integral, abs=1e-8)

    def test_affine_equivariance(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal(30)
        y = 0.7
        base = crps_ensemble(x, y)
        assert crps_ensemble(3.0 * x + 2.0, 3.0 * y + 2.0) == pytest.approx(3.0 * base, rel=1e-12)

    def test_rewards_closer_observations(self):
        x = np.random.default_rng(5).standard_normal(50)
        assert crps_ensemble(x, 0.0) < crps_ensemble(x, 5.0)

    def test_validation(self):
        with pytest.raises(ValueError, match="empty"):
            crps_ensemble(np.array([]), 0.5)
        with pytest.raises(ValueError, match="finite"):
            crps_ensemble(np.array([0.1, np.nan]), 0.5)
        with pytest.raises(ValueError, match="finite"):
            crps_ensemble(np.array([0.1, 0.2]), np.inf)


class TestCrpsMean:
    def test_averages_per_case_scores(self):
        ens = np.array([[0.0, 1.0], [0.2, 0.2]])
        obs = np.array([0.0, 0.7])
        expected = 0.5 * (crps_ensemble(ens[0], 0.0) + crps_ensemble(ens[1], 0.7))
        assert crps_mean(ens, obs) == pytest.approx(expected, rel=1e-12)

    def test_perfectly_calibrated_uniform_forecast(self):
        # Predictive distribution == data distribution == U(0, 1) scores
        # the known value 1/6.
        rng = np.random.default_rng(0)
        ens = rng.random((300, 400))
        obs = rng.random(300)
        assert crps_mean(ens, obs) == pytest.approx(1.0 / 6.0, abs=0.005)

    def test_shape_validation(self):
        with pytest.raises(ValueError, match="align"):
            crps_mean(np.zeros((3, 5)), np.zeros(4))
        with pytest.raises(ValueError, match="align"):
            crps_mean(np.zeros(5), np.zeros(5))


class TestPinballLoss:
    def test_hand_values(self):
        assert pinball_loss(np.array([0.0]), np.array([1.0]), 0.9) == pytest.approx(0.9)
        assert pinball_loss(np.array([0.0]), np.array([-1.0]), 0.9) == pytest.approx(0.1)
        assert pinball_loss(np.array([0.0]), np.array([1.0]), 0.1) == pytest.approx(0.1)

    def test_median_pinball_is_half_mae(self):
        rng = np.random.default_rng(1)
        q = rng.standard_normal(50)
        y = rng.standard_normal(50)
        assert pinball_loss(q, y, 0.5) == pytest.approx(0.5 * np.mean(np.abs(y - q)), rel=1e-12)

    def test_empirical_quantile_minimises_its_level(self):
        y = np.random.default_rng(2).standard_normal(2001)
        q80 = np.quantile(y, 0.8)
        at_opt = pinball_loss(np.full_like(y, q80), y, 0.8)
        for off in (-0.3, 0.3):
            assert at_opt < pinball_loss(np.full_like(y, q80 + off), y, 0.8)

    def test_crps_is_twice_the_pinball_integral(self):
        # CRPS(F, y) = 2 * integral of the pinball loss of F's quantiles
        # over levels; a fine level grid must recover it within 3%.
        rng = np.random.default_rng(0)
        ens = rng.random((300, 100)) * 0.5 + 0.25
        obs = rng.random(300) * 0.5 + 0.25
        c = crps_mean(ens, obs)
        taus = np.linspace(0.005, 0.995, 199)
        q = np.quantile(ens, taus, axis=1)
        pb = np.mean([pinball_loss(q[j], obs, t) for j, t in enumerate(taus)])
        assert 2.0 * pb == pytest.approx(c, rel=0.03)

    def test_validation(self):
        with pytest.raises(ValueError, match="tau"):
            pinball_loss(np.zeros(3), np.zeros(3), 0.0)
        with pytest.raises(ValueError, match="tau"):
            pinball_loss(np.zeros(3), np.zeros(3), 1.0)
        with pytest.raises(ValueError, match="shapes"):
            pinball_loss(np.zeros(3), np.zeros(4), 0.5)


class TestCentralInterval:
    def test_interior_level_uses_symmetric_quantiles(self):
        x = np.linspace(0.0, 1.0, 101)
        lo, hi = central_interval(x, 0.5)
        assert lo == pytest.approx(np.quantile(x, 0.25))
        assert hi == pytest.approx(np.quantile(x, 0.75))

    def test_level_one_pins_to_support(self):
        x = np.array([0.4, 0.5, 0.6])
        assert central_interval(x, 1.0) == (0.0, 1.0)

    def test_support_clips_the_interval(self):
        x = np.array([-1.0, 0.2, 0.8, 2.0])
        lo, hi = central_interval(x, 0.9, support=(0.0, 1.0))
        assert lo >= 0.0 and hi <= 1.0

    def test_no_support_keeps_raw_quantiles(self):
        x = np.array([-5.0, 0.0, 5.0])
        lo, hi = central_interval(x, 1.0, support=None)
        assert (lo, hi) == (-5.0, 5.0)

    @pytest.mark.parametrize("level", [0.0, -0.1, 1.1])
    def test_level_bounds(self, level):
        with pytest.raises(ValueError, match="level"):
            central_interval(np.zeros(3), level)


class TestReliabilityAndSharpness:
    def test_calibrated_forecasts_cover_at_nominal_rate(self):
        rng = np.random.default_rng(0)
        ens = rng.random((300, 400))
        obs = rng.random(300)
        cov = reliability(ens, obs, levels=(0.5, 0.9))
        assert 0.45 <= cov[0] <= 0.55
        assert 0.88 <= cov[1] <= 0.92

    def test_uniform_interval_widths_match_levels(self):
        rng = np.random.default_rng(0)
        ens = rng.random((300, 400))
        widths = sharpness(ens, levels=(0.5, 0.9))
        assert widths[0] == pytest.approx(0.5, abs=0.02)
        assert widths[1] == pytest.approx(0.9, abs=0.02)

    def test_observation_inside_every_interval(self):
        ens = np.tile(np.linspace(0.1, 0.9, 50), (4, 1))
        obs = np.full(4, 0.5)
        np.testing.assert_array_equal(reliability(ens, obs), np.ones(len(DEFAULT_LEVELS)))

    def test_observation_outside_every_interval(self):
        ens = np.tile(np.linspace(0.1, 0.9, 50), (4, 1))
        obs = np.full(4, 0.99)
        np.testing.assert_array_equal(reliability(ens, obs), np.zeros(len(DEFAULT_LEVELS)))

    def test_constant_ensembles_have_zero_width(self):
        ens = np.full((3, 20), 0.37)
        np.testing.assert_allclose(sharpness(ens), np.zeros(len(DEFAULT_LEVELS)), atol=1e-12)

    def test_wider_ensembles_are_less_sharp(self):
        rng = np.random.default_rng(6)
        narrow = 0.5 + 0.01 * rng.standard_normal((10, 200))
        wide = 0.5 + 0.2 * rng.standard_normal((10, 200))
        assert np.all(sharpness(np.clip(narrow, 0, 1)) <= sharpness(np.clip(wide, 0, 1)))


class TestScoreReport:
    def _report(self):
        rng = np.random.default_rng(7)
        ens = rng.random((40, 60))
        obs = rng.random(40)
        return ens, obs, score_report(ens, obs)

    def test_bundles_all_scores_consistently(self):
        ens, obs, rep = self._report()
        assert rep.n_cases == 40
        assert rep.crps == pytest.approx(crps_mean(ens, obs), rel=1e-12)
        assert rep.crps_pct == pytest.approx(100.0 * rep.crps, rel=1e-12)
        assert rep.levels == DEFAULT_LEVELS
        assert rep.taus == DEFAULT_TAUS
        assert rep.coverage.shape == (len(DEFAULT_LEVELS),)
        assert rep.width.shape == (len(DEFAULT_LEVELS),)
        np.testing.assert_allclose(rep.coverage, reliability(ens, obs), atol=1e-12)
        np.testing.assert_allclose(rep.width, sharpness(ens), atol=1e-12)
        q = np.quantile(ens, DEFAULT_TAUS, axis=1)
        expected_pb = [pinball_loss(q[j], obs, t) for j, t in enumerate(DEFAULT_TAUS)]
        np.testing.assert_allclose(rep.pinball, expected_pb, rtol=1e-12)

    def test_dict_form_is_json_ready(self):
        _, _, rep = self._report()
        d = report_to_dict(rep, meta={"site": "site1"})
        assert list(d)[0] == "site"
        assert d["n_cases"] == 40
        assert d["reliability"]["levels"] == [float(g) for g in DEFAULT_LEVELS]
        assert len(d["pinball"]["loss"]) == len(DEFAULT_TAUS)
        json.dumps(d)  # must not raise

    def test_json_file_round_trip(self, tmp_path):
        _, _, rep = self._report()
        path = tmp_path / "report.json"
        write_report_json(path, rep, meta={"k": 6})
        loaded = json.loads(path.read_text())
        assert loaded["k"] == 6
        assert loaded["crps"] == pytest.approx(rep.crps)

    def test_diagram_csvs(self, tmp_path):
        _, _, rep = self._report()
        rel_path = tmp_path / "reliability.csv"
        sh_path = tmp_path / "sharpness.csv"
        write_report_csvs(rel_path, sh_path, rep, comments=["made by a test"])
        text = rel_path.read_text()
        assert text.startswith("# made by a test\n")
        rows = [r for r in csv.reader(text.splitlines()) if not r[0].startswith("#")]
        assert rows[0] == ["level", "coverage"]
        assert len(rows) == 1 + len(DEFAULT_LEVELS)
        got = np.array([float(r[1]) for r in rows[1:]])
        np.testing.assert_allclose(got, rep.coverage, atol=1e-15)
        sh_rows = [r for r in csv.reader(sh_path.read_text().splitlines()) if not r[0].startswith("#")]
        assert sh_rows[0] == ["level", "width"]

    def test_default_report_fields(self):
        rep = ScoreReport(n_cases=0, crps=0.0, crps_pct=0.0)
        assert rep.levels == DEFAULT_LEVELS
        assert rep.coverage.size == 0
