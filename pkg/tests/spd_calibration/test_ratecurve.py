"""
Tests for DE-versus-rate aggregation, fitting and evaluation.
"""

import pytest

from spd_calibration.errors import InsufficientDataError, InvalidArgumentError
from spd_calibration.quantities import Uncertain
from spd_calibration.ratecurve import (
    RatePoint,
    aggregate_by_setting,
    de_at_rate,
    exclude_above,
    fit_rate_curve,
    flag_outliers,
)

RATES = [3e3, 1e4, 3e4, 1e5, 3e5, 1e6]


def _blocked_points(u=0.002, de0=0.556, dead_time=52e-9):
    return [
        RatePoint(r, Uncertain(de0 * (1 - dead_time * r), u), f"s{i + 1:02d}", u_stat=u / 4)
        for i, r in enumerate(RATES)
    ]


class TestRatePoint:
    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            RatePoint(0.0, Uncertain(0.5, 0.01))
        with pytest.raises(InvalidArgumentError):
            RatePoint(1e4, Uncertain(1.6, 0.01))


class TestAggregation:
    def test_means_per_setting_in_order(self):
        points = [
            RatePoint(1.1e4, Uncertain(0.56, 0.002), "s02"),
            RatePoint(1e3, Uncertain(0.55, 0.002), "s01"),
            RatePoint(0.9e4, Uncertain(0.54, 0.002), "s02"),
        ]
        means = aggregate_by_setting(points)
        assert [m.setting_id for m in means] == ["s02", "s01"]
        assert means[0].rate == pytest.approx(1e4)
        assert means[0].de == pytest.approx(0.55)
        assert means[0].n_points == 2


class TestRateCurve:
    """Linear DE(rate) fit and the combined uncertainty at target rates."""

    def test_recovers_blocking_slope(self):
        fit = fit_rate_curve(_blocked_points())
        assert fit.intercept.value == pytest.approx(0.556, rel=1e-10)
        assert fit.slope.value == pytest.approx(-0.556 * 52e-9, rel=1e-8)
        assert (fit.rate_min, fit.rate_max) == (3e3, 1e6)
        assert not fit.weighted

    def test_de_at_rate_combines_point_and_fit_u(self):
        points = _blocked_points()
        fit = fit_rate_curve(points)
        estimate = de_at_rate(fit, points, 1e5)
        assert estimate.de.value == pytest.approx(0.556 * (1 - 52e-9 * 1e5), rel=1e-9)
        assert estimate.mean_point_u == pytest.approx(0.002)
        assert estimate.prediction_u == pytest.approx(0.0, abs=1e-9)
        assert estimate.de.u == pytest.approx(0.002, rel=1e-6)
        assert not estimate.far_extrapolation
        assert estimate.expanded(2.0).hi == pytest.approx(estimate.de.value + 0.004)

    def test_far_extrapolation_flag(self):
        points = _blocked_points()
        estimate = de_at_rate(fit_rate_curve(points), points, 2e7)
        assert estimate.far_extrapolation

    def test_weighted_fit(self):
        fit = fit_rate_curve(_blocked_points(), weighted=True)
        assert fit.weighted
        assert fit.intercept.u > 0
        assert fit.intercept.value == pytest.approx(0.556, rel=1e-10)

    def test_cutoff(self):
        kept = exclude_above(_blocked_points(), 3e5)
        assert [p.rate for p in kept] == RATES[:-1]
        with pytest.raises(InsufficientDataError):
            fit_rate_curve(exclude_above(_blocked_points(), 1e4))


class TestOutliers:
    def test_single_deviating_point(self):
        points = _blocked_points()
        bad = points[2]
        points[2] = RatePoint(bad.rate, Uncertain(bad.de.value + 0.05, bad.de.u), bad.setting_id, bad.u_stat)
        flags = flag_outliers(points, k=3)
        assert flags == [False, False, True, False, False, False]

    def test_no_flags_without_uncertainty_or_points(self):
        points = [RatePoint(r, Uncertain(0.55, 0.0), u_stat=0.0) for r in RATES]
        assert not any(flag_outliers(points))
        assert flag_outliers(_blocked_points()[:2]) == [False, False]
