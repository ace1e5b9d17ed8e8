import pytest

from spd_calibration.config import (
    load_afterpulse_config,
    load_config,
    load_consensus_config,
    load_monte_carlo_config,
    load_ratecurve_config,
    load_report_config,
)
from spd_calibration.schemas import Scenario


def test_sections_present():
    assert {"afterpulse", "ratecurve", "consensus", "monte_carlo", "report"} <= set(load_config())


def test_defaults():
    assert load_afterpulse_config()["baseline_start_s"] == 500e-9
    assert load_afterpulse_config()["threshold_fraction"] == 0.5
    assert load_ratecurve_config()["far_extrapolation_factor"] == 10.0
    assert load_consensus_config()["level"] == 0.95
    assert load_monte_carlo_config()["n_draws"] == 100000
    assert load_report_config()["coverage_factor"] == 2.0


@pytest.fixture
def fresh_config():
    load_config.cache_clear()
    yield
    load_config.cache_clear()


def _scenario() -> Scenario:
    return Scenario(
        constants="fiber_851",
        counts="counts.csv",
        monitor="monitor.csv",
        reference="reference.csv",
        wavelength_nm=851.8,
    )


def test_scenario_defaults_follow_settings(fresh_config):
    scenario = _scenario()
    assert scenario.target_rates == [1.0, 1e5]
    assert scenario.weighted is False
    assert scenario.outlier_k == 3.0


def test_environment_overrides_reach_scenarios(fresh_config, monkeypatch):
    monkeypatch.setenv("SPDCAL_RATECURVE__WEIGHTED", "true")
    monkeypatch.setenv("SPDCAL_RATECURVE__OUTLIER_K", "5.0")
    monkeypatch.setenv("SPDCAL_RATECURVE__TARGET_RATES", "[10.0, 10000.0]")
    load_config.cache_clear()
    scenario = _scenario()
    assert scenario.weighted is True
    assert scenario.outlier_k == 5.0
    assert scenario.target_rates == [10.0, 1e4]
