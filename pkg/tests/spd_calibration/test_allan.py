"""
Tests for the Allan deviation of power readings and ratios.
"""

import math

import numpy as np
import pytest

from spd_calibration.allan import (
    SampledSeries,
    allan_deviation,
    octave_taus,
    ratio_series,
    relative_allan,
)
from spd_calibration.errors import InsufficientDataError, InvalidArgumentError
from spd_calibration.schemas import PowerMeterSimConfig
from spd_calibration.simulator import simulate_power_series


class TestAllanDeviation:
    def test_alternating_series(self):
        series = SampledSeries(np.array([1.0, 2.0, 1.0, 2.0, 1.0]))
        assert allan_deviation(series, 1.0) == pytest.approx(math.sqrt(0.5))
        assert allan_deviation(series, 1.0, overlapping=False) == pytest.approx(math.sqrt(0.5))

    def test_constant_series(self):
        series = SampledSeries(np.full(16, 3.0))
        assert relative_allan(series, [1.0, 2.0]) == [(1.0, 0.0), (2.0, 0.0)]

    def test_white_noise_averages_down(self):
        rng = np.random.default_rng(11)
        series = SampledSeries(1.0 + 1e-3 * rng.standard_normal(20000))
        rows = dict(relative_allan(series, [1.0, 4.0, 16.0]))
        assert rows[1.0] == pytest.approx(0.1, rel=0.05)
        assert rows[4.0] == pytest.approx(0.05, rel=0.08)
        assert rows[16.0] == pytest.approx(0.025, rel=0.15)

    def test_white_noise_slope(self):
        rng = np.random.default_rng(21)
        series = SampledSeries(1.0 + 1e-3 * rng.standard_normal(100_000))
        taus, percents = zip(*relative_allan(series, [2.0**k for k in range(7)]))
        slope = np.polyfit(np.log(taus), np.log(percents), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.05)

    def test_sample_interval_scales_tau(self):
        series = SampledSeries(np.array([1.0, 2.0, 1.0, 2.0, 1.0]), sample_interval=0.5)
        assert allan_deviation(series, 0.5) == pytest.approx(math.sqrt(0.5))
        with pytest.raises(InvalidArgumentError):
            allan_deviation(series, 0.75)

    def test_infeasible_tau(self):
        series = SampledSeries(np.arange(1.0, 9.0))
        with pytest.raises(InsufficientDataError):
            allan_deviation(series, 4.0)
        assert allan_deviation(series, 4.0, overlapping=False) >= 0

    def test_octave_taus(self):
        assert octave_taus(SampledSeries(np.ones(9))) == [1.0, 2.0, 4.0]
        assert octave_taus(SampledSeries(np.ones(8))) == [1.0, 2.0]
        assert octave_taus(SampledSeries(np.ones(8)), overlapping=False) == [1.0, 2.0, 4.0]


class TestRatioSeries:
    """Common-mode drift cancels in the monitor-to-reference ratio."""

    def test_shared_drift_cancels(self):
        configs = [
            PowerMeterSimConfig(name="pm_mon", mean=1e-4, white_sigma=1e-3, drift=3e-4, common_mode_id="laser"),
            PowerMeterSimConfig(name="pm", mean=3.4e-9, white_sigma=1e-3, drift=3e-4, common_mode_id="laser"),
        ]
        mon, ref = simulate_power_series(configs, 2000, seed=5)
        raw = dict(relative_allan(mon, [256.0]))[256.0]
        ratio = dict(relative_allan(ratio_series(ref, mon), [256.0]))[256.0]
        assert ratio < raw / 3

    @pytest.mark.slow
    def test_ratio_below_raw_over_seeds(self):
        configs = [
            PowerMeterSimConfig(name="pm_mon", mean=1e-4, white_sigma=1e-3, drift=3e-4, common_mode_id="laser"),
            PowerMeterSimConfig(name="pm", mean=3.4e-9, white_sigma=1e-3, drift=3e-4, common_mode_id="laser"),
        ]
        below = 0
        for seed in range(100):
            mon, ref = simulate_power_series(configs, 2000, seed=seed)
            raw = dict(relative_allan(mon, [25.0]))[25.0]
            ratio = dict(relative_allan(ratio_series(ref, mon), [25.0]))[25.0]
            below += ratio < raw
        assert below >= 95

    def test_mismatched_series(self):
        a = SampledSeries(np.ones(10))
        with pytest.raises(InvalidArgumentError):
            ratio_series(a, SampledSeries(np.ones(11)))
        with pytest.raises(InvalidArgumentError):
            ratio_series(a, SampledSeries(np.ones(10), sample_interval=2.0))
        with pytest.raises(InvalidArgumentError):
            ratio_series(a, SampledSeries(np.zeros(10)))

    def test_series_validation(self):
        with pytest.raises(InsufficientDataError):
            SampledSeries(np.array([1.0]))
        with pytest.raises(InvalidArgumentError):
            SampledSeries(np.array([1.0, np.nan]))
