"""
Tests for the seeded apparatus simulator.
"""

import math

import numpy as np
import pandas.testing as pdt
import pytest

from spd_calibration.errors import SaturationError
from spd_calibration.schemas import DetectorConfig, PowerMeterSimConfig, SourceConfig
from spd_calibration.simulator import (
    TAGGER_RESOLUTION,
    expected_detected_rate,
    simulate_campaign,
    simulate_detections,
    simulate_power_series,
)
from spd_calibration.timetag import (
    afterpulse_probability,
    estimate_dead_time,
    interarrival_sum_histogram,
)

CW = SourceConfig(mode="cw", rate=2e5)
SPAD = DetectorConfig(dead_time=52e-9, de_true=0.5)


class TestDetections:
    """Time-tag streams of a detector with dead time and afterpulsing."""

    def test_seed_reproducibility(self):
        a = simulate_detections(CW, SPAD, 0.1, seed=42)
        b = simulate_detections(CW, SPAD, 0.1, seed=42)
        c = simulate_detections(CW, SPAD, 0.1, seed=43)
        assert np.array_equal(a.ticks, b.ticks)
        assert not np.array_equal(a.ticks, c.ticks)
        assert a.resolution == TAGGER_RESOLUTION

    def test_non_paralyzable_rate(self):
        stream = simulate_detections(CW, SPAD, 1.0, seed=1)
        expected = expected_detected_rate(CW, SPAD)
        assert expected == pytest.approx(1e5 / (1 + 1e5 * 52e-9))
        assert stream.rate == pytest.approx(expected, rel=0.015)
        assert np.diff(stream.ticks).min() >= math.floor(52e-9 / TAGGER_RESOLUTION)

    def test_pulsed_source(self):
        source = SourceConfig(mode="pulsed", rate=1e6, mu_p=0.1)
        stream = simulate_detections(source, SPAD, 1.0, seed=2)
        assert stream.rate == pytest.approx(1e6 * (1 - math.exp(-0.05)), rel=0.02)

    def test_saturation(self):
        with pytest.raises(SaturationError):
            simulate_detections(SourceConfig(rate=3e7), DetectorConfig(dead_time=52e-9), 0.01, seed=0)

    @pytest.mark.integration
    def test_afterpulse_probability_from_stream(self):
        det = DetectorConfig(dead_time=52e-9, afterpulse_prob=0.02, afterpulse_tau=20e-9, de_true=0.5)
        stream = simulate_detections(CW, det, 2.0, seed=5)
        hist = interarrival_sum_histogram(stream, bin_width=8 * TAGGER_RESOLUTION, window=1e-6)
        dead = estimate_dead_time(hist)
        assert dead.dead_time.value == pytest.approx(52e-9, abs=2.5e-9)
        estimate = afterpulse_probability(hist, 500e-9, dead)
        assert abs(estimate.probability.value - 0.02) < 4 * estimate.probability.u + 1e-3


class TestPowerSeries:
    def test_shared_drift(self):
        configs = [
            PowerMeterSimConfig(name="a", mean=1e-4, drift=1e-3, common_mode_id="laser"),
            PowerMeterSimConfig(name="b", mean=3e-9, drift=1e-3, common_mode_id="laser"),
            PowerMeterSimConfig(name="c", mean=1e-4, drift=1e-3),
        ]
        a, b, c = simulate_power_series(configs, 500, seed=9)
        assert np.allclose(a.values / 1e-4, b.values / 3e-9, rtol=1e-12)
        assert not np.allclose(a.values, c.values, rtol=1e-6)

    def test_reproducible(self):
        config = [PowerMeterSimConfig(mean=1.0, white_sigma=1e-3)]
        first = simulate_power_series(config, 100, seed=3)[0]
        second = simulate_power_series(config, 100, seed=3)[0]
        assert np.array_equal(first.values, second.values)


class TestCampaign:
    """Count, monitor and reference records of a full calibration campaign."""

    def test_reproducible(self, fiber_scenario, fiber_constants):
        a = simulate_campaign(fiber_scenario, fiber_constants, seed=7)
        b = simulate_campaign(fiber_scenario, fiber_constants, seed=7)
        pdt.assert_frame_equal(a.counts, b.counts)
        pdt.assert_frame_equal(a.monitor, b.monitor)
        pdt.assert_frame_equal(a.reference, b.reference)
        assert a.truth == b.truth

    def test_record_layout(self, fiber_scenario, fiber_constants):
        campaign = simulate_campaign(fiber_scenario, fiber_constants, seed=0)
        counts = campaign.counts
        assert len(counts) == 6 * 3
        assert counts["setting_id"].iloc[0] == "s01" and counts["setting_id"].iloc[-1] == "s06"
        monitor = campaign.monitor
        bright = monitor[(monitor["range_id"] == "dut") & (monitor["dark"] == 0)]
        for row in counts.itertuples():
            window = bright[(bright["t_s"] >= row.t_start_s) & (bright["t_s"] <= row.t_stop_s)]
            assert len(window) == 25
        assert set(campaign.reference["range_id"]) == {"ratio"}
        assert campaign.reference_unit == "W"

    def test_noiseless_counts_are_expected_values(self, fiber_scenario, fiber_constants):
        scenario = fiber_scenario.model_copy(update={"noiseless": True})
        campaign = simulate_campaign(scenario, fiber_constants, seed=0)
        assert campaign.truth.draws["cal_abs"] == 1.0
        assert (campaign.counts["c_dark"] == 50.0).all()
        assert campaign.counts["c_bar"].is_monotonic_increasing

    def test_bistable_dark_after_switch(self, bistable_scenario, fiber_constants):
        noiseless = bistable_scenario.model_copy(update={"noiseless": True})
        steady = noiseless.model_copy(update={"bistable_dark": None})
        with_switch = simulate_campaign(noiseless, fiber_constants, seed=0).counts
        without = simulate_campaign(steady, fiber_constants, seed=0).counts
        excess = with_switch["c_bar"] - without["c_bar"]
        last = with_switch["setting_id"] == "s06"
        assert (excess[~last] == 0).all()
        assert (excess[last] > 140.0).all()
