import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ggtde.errors import DomainError
from ggtde.estimators import (
    EstimatorReport,
    RunningStats,
    coefficient_of_variation,
    estimator_report,
    mbbe_factor,
    mbbe_optimality_experiment,
    mbbe_variance,
    prop1_bias_experiment,
    relative_efficiency,
    sample_excess_kurtosis,
    sample_variance,
    shrunk_kurtosis,
    shrunk_kurtosis_from_moments,
)
from ggtde.ggd import GGDParams, sample


class TestSampleVariance:
    def test_constant(self):
        assert sample_variance([1.0, 1.0, 1.0]) == 0.0

    def test_pair(self):
        assert sample_variance([0.0, 2.0]) == 2.0

    def test_monte_carlo(self):
        x = np.random.default_rng(0).normal(0.0, 2.0, 1_000_000)
        assert sample_variance(x) == pytest.approx(4.0, rel=0.01)

    def test_too_short(self):
        with pytest.raises(DomainError):
            sample_variance([1.0])


class TestKurtosis:
    def test_two_point(self):
        assert sample_excess_kurtosis([-1.0, -1.0, 1.0, 1.0]) == pytest.approx(-2.0)

    def test_normal(self):
        x = np.random.default_rng(1).standard_normal(1_000_000)
        assert abs(sample_excess_kurtosis(x)) <= 0.03

    def test_laplace(self):
        x = sample(GGDParams(1.0, 1.0), 1_000_000, seed=3)
        assert sample_excess_kurtosis(x) == pytest.approx(3.0, abs=0.2)

    def test_zero_variance(self):
        with pytest.raises(DomainError):
            sample_excess_kurtosis([2.0] * 5)

    def test_shrunk_rows(self):
        rows = np.array([[-1.0, -1.0, 1.0, 1.0], [3.0, 3.0, 3.0, 3.0]])
        np.testing.assert_allclose(shrunk_kurtosis(rows), [-2.0 * 4 / 14, 0.0])

    def test_shrunk_small_ensemble(self):
        assert np.all(shrunk_kurtosis(np.ones((3, 2))) == 0.0)

    def test_shrunk_from_moments(self):
        rows = np.random.default_rng(2).standard_t(4, size=(50, 7))
        c = rows - rows.mean(axis=1, keepdims=True)
        got = shrunk_kurtosis_from_moments(np.mean(c**2, axis=1), np.mean(c**4, axis=1), 7)
        np.testing.assert_allclose(got, shrunk_kurtosis(rows, axis=1), rtol=1e-13)


class TestMBBE:
    def test_gaussian_shrinkage(self):
        x = [0.3, -1.2, 2.0, 0.7, -0.4]
        assert mbbe_variance(x, 0.0) == pytest.approx(sample_variance(x) * 2.0 / 3.0, rel=1e-14)

    def test_heavy_tail_shrinkage(self):
        x = [0.3, -1.2, 2.0, 0.7, -0.4]
        assert mbbe_variance(x, 3.0) == pytest.approx(sample_variance(x) / 2.1, rel=1e-14)

    @pytest.mark.parametrize("kappa", [None, 0.0, 5.0])
    def test_constant_data(self, kappa):
        assert mbbe_variance([4.0] * 6, kappa) == 0.0

    def test_estimated_kappa(self):
        x = np.array([-3.0, -0.1, 0.0, 0.2, 0.1, 4.0])
        k = float(shrunk_kurtosis(x))
        expected = sample_variance(x) / (k / 6 + 7 / 5)
        assert mbbe_variance(x) == pytest.approx(expected, rel=1e-14)
        assert mbbe_variance(x, math.nan) == pytest.approx(expected, rel=1e-14)

    def test_non_positive_denominator(self):
        with pytest.raises(DomainError):
            mbbe_variance([0.0, 1.0, 2.0], -100.0)

    def test_clamped_denominator(self):
        assert mbbe_factor(3, -100.0, clamp=True) == pytest.approx(10.0)

    @settings(max_examples=100, deadline=None)
    @given(
        xs=st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40),
        kappa=st.floats(0.0, 50.0),
    )
    def test_shrinks_below_sample_variance(self, xs, kappa):
        s2 = sample_variance(xs)
        if s2 > 1e-12:
            assert mbbe_variance(xs, kappa) < s2


class TestRelativeEfficiency:
    @pytest.mark.parametrize("n, kappa, expected", [(3, 0.0, 2.0), (5, 3.0, 2.1)])
    def test_values(self, n, kappa, expected):
        assert relative_efficiency(n, kappa) == pytest.approx(expected, rel=1e-15)

    def test_asymptote(self):
        assert relative_efficiency(1_000_000, 0.0) == pytest.approx(1.000002, rel=1e-9)

    def test_above_one_on_grid(self):
        for n in range(2, 200, 7):
            for kappa in np.linspace(0.0, 30.0, 13):
                assert relative_efficiency(n, kappa) > 1.0

    def test_domain(self):
        with pytest.raises(DomainError):
            relative_efficiency(1, 0.0)


class TestCoefficientOfVariation:
    def test_pair(self):
        assert coefficient_of_variation([1.0, 3.0]) == pytest.approx(math.sqrt(2.0) / 2.0)

    def test_monte_carlo(self):
        x = np.random.default_rng(4).normal(10.0, 1.0, 100_000)
        assert coefficient_of_variation(x) == pytest.approx(0.1, rel=0.02)

    def test_zero_mean(self):
        with pytest.raises(DomainError):
            coefficient_of_variation([-1.0, 1.0])


class TestReport:
    def test_json_field_names(self):
        rep = estimator_report([0.5, 1.5, 2.0, 3.0, 1.0])
        d = json.loads(rep.to_json())
        assert list(d) == [
            "n",
            "sample_mean",
            "sample_variance",
            "mbbe_variance",
            "kurtosis_estimate",
            "relative_efficiency",
            "coefficient_of_variation",
        ]
        assert isinstance(rep, EstimatorReport)

    def test_known_kappa(self):
        rep = estimator_report([1.0, 2.0, 4.0, 8.0, 3.0], kappa=3.0)
        assert rep.relative_efficiency == pytest.approx(2.1)
        assert rep.mbbe_variance == pytest.approx(rep.sample_variance / 2.1)

    def test_efficiency_above_one(self):
        rep = estimator_report(sample(GGDParams(1.0, 1.2), 50, seed=1))
        if rep.kurtosis_estimate > -2 * 49 / 50:
            assert rep.relative_efficiency > 1.0


class TestRunningStats:
    def test_merge_order_independent(self):
        x = np.random.default_rng(5).normal(size=10_001)
        a = RunningStats().update(x)
        parts = [RunningStats().update(c) for c in np.array_split(x, 7)]
        b = RunningStats()
        for p in reversed(parts):
            b.merge(p)
        assert a.count == b.count
        assert a.mean == pytest.approx(b.mean, rel=1e-12)
        assert a.variance == pytest.approx(np.var(x, ddof=1), rel=1e-12)
        assert b.variance == pytest.approx(a.variance, rel=1e-12)


class TestProp1:
    def test_heavy_tail_underestimates(self):
        r = prop1_bias_experiment(GGDParams(1.0, 1.0), 50, 10_000, seed=1)
        assert r.empirical_sd > r.normal_se
        assert r.sign_matches_kappa

    def test_gaussian_null(self):
        r = prop1_bias_experiment(GGDParams(1.0, 2.0), 50, 10_000, seed=2)
        assert 0.95 <= r.se_ratio <= 1.05
        assert r.sign_matches_kappa

    def test_light_tail_overestimates(self):
        r = prop1_bias_experiment(GGDParams(1.0, 8.0), 50, 10_000, seed=3)
        assert r.normal_se > r.empirical_sd
        assert r.sign_matches_kappa

    @pytest.mark.parametrize("beta", [0.7, 1.0, 1.5, 4.0, 8.0])
    def test_sign_agreement(self, beta):
        assert prop1_bias_experiment(GGDParams(1.0, beta), 50, 10_000, seed=int(beta * 100)).sign_matches_kappa

    def test_finite_sample_bias(self):
        r = prop1_bias_experiment(GGDParams(1.0, 2.0), 20, 50_000, seed=4)
        assert r.mean_bias == pytest.approx(-r.true_variance / 20, rel=0.15)

    def test_deterministic(self):
        a = prop1_bias_experiment(GGDParams(1.0, 1.0), 10, 1_000, seed=9)
        b = prop1_bias_experiment(GGDParams(1.0, 1.0), 10, 1_000, seed=9)
        assert a == b

    def test_insufficient_trials(self):
        with pytest.raises(DomainError):
            prop1_bias_experiment(GGDParams(), 50, 999, seed=0)


class TestMBBEOptimality:
    @pytest.mark.parametrize("beta", [1.0, 2.0, 4.0])
    def test_formula(self, beta):
        r = mbbe_optimality_experiment(GGDParams(1.0, beta), 10, 100_000, seed=int(beta))
        assert r.mse_mbbe <= r.mse_sample_var
        assert r.empirical_re == pytest.approx(relative_efficiency(10, r.kappa), rel=0.10)

    def test_forced_plain_weight(self):
        r = mbbe_optimality_experiment(GGDParams(1.0, 1.3), 10, 10_000, seed=5, omega=1.0 / 9.0)
        assert r.empirical_re == pytest.approx(1.0, abs=1e-12)

    def test_insufficient_trials(self):
        with pytest.raises(DomainError):
            mbbe_optimality_experiment(GGDParams(), 10, 9_999, seed=0)
