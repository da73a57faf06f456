"""Tests for the experiment engines: calibrated power curves and the
semi-synthetic detection sweep."""

import datetime
import math

import numpy as np
import pytest

from fedsurv.errors import ConfigError, DomainError
from fedsurv.evaluation import alarms_from_growth
from fedsurv.experiments import (
    DEFAULT_THRESHOLDS,
    POWER_METHODS,
    PowerCurveConfig,
    SemisynthConfig,
    builtin_wave_counts,
    calibrate_threshold,
    dominant_profile,
    run_power_curve,
    run_semisynth_sweep,
)
from fedsurv.experiments import _method_series, _window_pvalue_matrix
from fedsurv.federation import FederationConfig, SiteNode, run_federation
from fedsurv.semisynth import (
    ShareVector,
    moving_average,
    normalized_entropy,
    poisson_sample,
    split_multinomial,
)
from fedsurv.surge import SurgeHypothesis, SurgeWindow, exact_p_value


class TestPowerCurveConfig:
    def test_defaults_are_valid(self):
        cfg = PowerCurveConfig()
        assert cfg.methods == POWER_METHODS
        assert math.isclose(cfg.baseline_rate, 200.0 / 5.3)

    def test_rejects_nonpositive_total(self):
        with pytest.raises(ConfigError):
            PowerCurveConfig(n_total=0)

    def test_rejects_bad_shares(self):
        with pytest.raises(DomainError):
            PowerCurveConfig(shares=(0.7, 0.7))

    def test_rejects_unknown_method(self):
        with pytest.raises(ConfigError):
            PowerCurveConfig(methods=("stouffer", "median"))

    def test_rejects_empty_grid(self):
        with pytest.raises(ConfigError):
            PowerCurveConfig(theta_grid=())

    def test_rejects_tiny_replicate_counts(self):
        with pytest.raises(ConfigError):
            PowerCurveConfig(calibration_reps=10)


class TestCalibrateThreshold:
    def test_uniform_sample_hits_target(self):
        rng = np.random.default_rng(5)
        th, rate = calibrate_threshold(rng.uniform(size=20000), 0.05)
        assert abs(rate - 0.05) <= 0.002
        assert 0.03 < th < 0.07

    def test_atom_straddling_target_settles_conservative(self):
        # every p-value is the same atom; no threshold hits 0.05 so the
        # search must come back below target, not above
        th, rate = calibrate_threshold(np.full(1000, 0.5), 0.05)
        assert rate <= 0.05
        assert th <= 0.5 + 1e-12

    def test_rate_definition_is_strict_below(self):
        sample = np.array([0.01, 0.02, 0.03, 0.04, 1.0])
        th, rate = calibrate_threshold(sample, 0.4, tol=0.05)
        assert rate == pytest.approx(0.4)
        assert 0.02 < th <= 0.03


@pytest.fixture(scope="module")
def smoke():
    cfg = PowerCurveConfig(
        methods=("centralized", "largest_site", "stouffer", "fisher"),
        theta_grid=(0.3, 1.0),
        calibration_reps=2000,
        power_reps=1000,
    )
    return cfg, run_power_curve(cfg, 99)


class TestRunPowerCurve:
    def test_points_cover_grid_sorted(self, smoke):
        cfg, res = smoke
        assert len(res.points) == len(cfg.methods) * len(cfg.theta_grid)
        keys = [(p.method, p.theta_alt) for p in res.points]
        assert keys == sorted(keys)
        assert set(res.thresholds) == set(cfg.methods)
        assert set(res.calibration_rates) == set(cfg.methods)

    def test_calibration_rates_near_alpha(self, smoke):
        _, res = smoke
        for method, rate in res.calibration_rates.items():
            assert 0.03 <= rate <= 0.055, method

    def test_null_grid_point_rejects_near_alpha(self, smoke):
        cfg, res = smoke
        for p in res.points:
            if p.theta_alt == cfg.hypothesis.theta:
                assert abs(p.power - cfg.hypothesis.alpha) <= 0.025, p

    def test_strong_surge_gives_high_power(self, smoke):
        _, res = smoke
        pw = {(p.method, p.theta_alt): p.power for p in res.points}
        for method in ("centralized", "stouffer", "fisher"):
            assert pw[(method, 1.0)] > 0.8, method
        # a single site holds half the evidence and pays for it
        assert pw[("largest_site", 1.0)] < pw[("centralized", 1.0)] - 0.15

    def test_same_seed_reproduces(self, smoke):
        cfg, res = smoke
        again = run_power_curve(cfg, 99)
        assert again.points == res.points
        assert again.thresholds == res.thresholds
        assert again.calibration_rates == res.calibration_rates


class TestBuiltinFixture:
    def test_deterministic_across_calls(self):
        a, b = builtin_wave_counts(), builtin_wave_counts()
        assert a.counts == b.counts
        assert a.timestamps == b.timestamps

    def test_shape_and_cadence(self):
        s = builtin_wave_counts()
        assert len(s.counts) == 400
        assert s.period == "weekly"
        assert s.timestamps[0] == datetime.date(2016, 1, 4)
        assert (s.timestamps[1] - s.timestamps[0]).days == 7
        assert min(s.counts) >= 0

    def test_surveillance_scale(self):
        s = builtin_wave_counts()
        mean = sum(s.counts) / len(s.counts)
        assert 60.0 < mean < 80.0
        # bursts push peaks well above the seasonal ceiling
        assert max(s.counts) > 3 * mean


class TestDominantProfile:
    def test_golden_five_sites(self):
        sv = dominant_profile(0.8, 5)
        assert sv.shares[0] == 0.8
        assert sv.shares[1:] == pytest.approx((0.05,) * 4, abs=1e-15)
        assert math.fsum(sv.shares) == pytest.approx(1.0, abs=1e-12)

    def test_two_sites(self):
        assert dominant_profile(0.5, 2).shares == (0.5, 0.5)

    def test_rejects_single_site(self):
        with pytest.raises(ConfigError):
            dominant_profile(1.0, 1)


class TestSemisynthConfig:
    def test_defaults_are_valid(self):
        cfg = SemisynthConfig()
        assert cfg.site_sweep == (2, 5, 10, 20)
        assert cfg.thresholds == DEFAULT_THRESHOLDS

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_replicates": 0},
            {"site_sweep_magnitude": 0.0},
            {"entropy_sites": 1},
            {"site_sweep": (2, 0)},
            {"magnitude_sweep": (1.0, -0.5)},
            {"dominant_sweep": (0.1,)},
            {"methods": ("stouffer", "median")},
        ],
    )
    def test_rejects_bad_fields(self, kwargs):
        with pytest.raises(ConfigError):
            SemisynthConfig(**kwargs)


class TestWindowPValueMatrix:
    def test_matches_scalar_surge_test(self):
        hyp = SurgeHypothesis(0.3, 4)
        counts = np.array([[5, 5, 5, 5, 5, 8], [2, 0, 1, 3, 2, 6]], dtype=np.int64)
        p, shares, totals = _window_pvalue_matrix(counts, hyp)
        assert p.shape == (2, 2)
        for i in range(2):
            for t in (4, 5):
                window = SurgeWindow(tuple(counts[i, t - 4 : t]), int(counts[i, t]))
                assert p[i, t - 4] == pytest.approx(exact_p_value(window, hyp), abs=1e-15)
        pooled = counts.sum(axis=0)
        assert totals.tolist() == [int(pooled[0:5].sum()), int(pooled[1:6].sum())]
        assert shares.sum(axis=0) == pytest.approx([1.0, 1.0], abs=1e-12)

    def test_empty_window_gets_uniform_shares(self):
        hyp = SurgeHypothesis(0.3, 2)
        counts = np.zeros((2, 3), dtype=np.int64)
        p, shares, totals = _window_pvalue_matrix(counts, hyp)
        assert p.tolist() == [[1.0], [1.0]]
        assert shares.tolist() == [[0.5], [0.5]]
        assert totals.tolist() == [1]

    def test_rejects_short_series(self):
        with pytest.raises(DomainError):
            _window_pvalue_matrix(np.zeros((1, 4), dtype=np.int64), SurgeHypothesis(0.3, 4))


class TestSweepMatchesFederation:
    """The vectorized sweep kernel and the protocol simulator must produce
    the same combined series when fed the same counts and true shares."""

    @pytest.mark.parametrize("method", ["fisher", "wstouffer", "lancaster"])
    def test_agreement_on_split_fixture(self, method):
        hyp = SurgeHypothesis(0.3, 4)
        base = builtin_wave_counts()
        head = type(base)(base.site_id, base.period, base.timestamps[:40], base.counts[:40])
        prev = moving_average(head, 5)
        sampled = poisson_sample(prev, 41, site_id="pooled")
        parts = split_multinomial(sampled, ShareVector((0.7, 0.3)), 42)

        counts = np.asarray([p.counts for p in parts], dtype=np.int64)
        p_site, share_mat, totals = _window_pvalue_matrix(counts, hyp)
        series = _method_series(
            method, p_site, share_mat, totals,
            p_central=np.ones(p_site.shape[1]), largest_index=0, rho=hyp.rho,
        )

        cfg = FederationConfig(hypothesis=hyp, method=method, share_source="known")
        combined = run_federation([SiteNode.wrap(p) for p in parts], cfg)
        assert len(combined) == series.size
        for j, period in enumerate(combined):
            assert period.period_index == hyp.baseline_len + j
            assert period.p == pytest.approx(series[j], abs=1e-10)


class TestRunSemisynthSweep:
    def test_single_site_point_collapses_to_centralized(self):
        cfg = SemisynthConfig(
            site_sweep=(1,),
            magnitude_sweep=(),
            dominant_sweep=(),
            n_replicates=2,
            methods=POWER_METHODS,
        )
        res = run_semisynth_sweep(cfg, 11)
        rows = {r.method: (r.recall_at_fdr, r.f1) for r in res.rows}
        target = rows["centralized"]
        assert target[1] == 1.0
        for method, got in rows.items():
            assert got == target, method
        (row,) = [r for r in res.rows if r.method == "centralized"]
        assert math.isnan(row.entropy)

    def test_equal_shares_make_wfisher_track_fisher(self):
        cfg = SemisynthConfig(
            site_sweep=(5,),
            magnitude_sweep=(),
            dominant_sweep=(),
            n_replicates=4,
            methods=("fisher", "wfisher"),
        )
        res = run_semisynth_sweep(cfg, 12)
        rows = {r.method: r for r in res.rows}
        assert abs(rows["fisher"].recall_at_fdr - rows["wfisher"].recall_at_fdr) <= 0.08
        assert abs(rows["fisher"].f1 - rows["wfisher"].f1) <= 0.08

    def test_same_seed_reproduces(self):
        cfg = SemisynthConfig(
            site_sweep=(2,),
            magnitude_sweep=(0.5,),
            dominant_sweep=(0.6,),
            n_replicates=2,
            methods=("centralized", "stouffer", "goods"),
        )
        assert run_semisynth_sweep(cfg, 7) == run_semisynth_sweep(cfg, 7)

    def test_row_labels_and_entropy_column(self):
        cfg = SemisynthConfig(
            site_sweep=(2,),
            magnitude_sweep=(0.5,),
            dominant_sweep=(0.6,),
            entropy_sites=5,
            n_replicates=1,
            methods=("centralized",),
        )
        res = run_semisynth_sweep(cfg, 3)
        by_sweep = {(r.sweep, r.setting): r for r in res.rows}
        assert set(by_sweep) == {("sites", "2"), ("magnitude", "0.5"), ("entropy", "0.6")}
        assert by_sweep[("sites", "2")].entropy == 1.0
        assert by_sweep[("magnitude", "0.5")].entropy == 1.0
        expected = normalized_entropy(dominant_profile(0.6, 5))
        assert by_sweep[("entropy", "0.6")].entropy == pytest.approx(expected)

    def test_truth_counts_are_scale_invariant(self):
        # growth alarms depend only on rate ratios, so every magnitude (and
        # the leaner site sweep) sees the same truth set
        cfg = SemisynthConfig(
            site_sweep=(2,),
            magnitude_sweep=(0.1, 0.5, 1.0, 2.0),
            dominant_sweep=(0.4,),
            n_replicates=1,
            methods=("centralized",),
        )
        res = run_semisynth_sweep(cfg, 13)
        prev = moving_average(builtin_wave_counts(), cfg.smoothing_window)
        expected = len(alarms_from_growth(prev, 0.3, 4))
        assert expected > 0
        assert set(res.truth_alarm_counts.values()) == {expected}

    def test_scores_lie_in_unit_interval(self):
        cfg = SemisynthConfig(
            site_sweep=(3,),
            magnitude_sweep=(),
            dominant_sweep=(),
            n_replicates=2,
            methods=("stouffer", "pearson", "tippett", "cstouffer"),
        )
        for row in run_semisynth_sweep(cfg, 21).rows:
            assert 0.0 <= row.recall_at_fdr <= 1.0
            assert 0.0 <= row.f1 <= 1.0
