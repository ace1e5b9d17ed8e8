"""
Tests for the MCP tools, called directly as plain functions.
"""

import pytest

from spd_calibration.server import (
    allan_tool,
    consensus_tool,
    de_tool,
    fiber_transmittance_tool,
    mcp,
    photon_flux_tool,
    simulate_tool,
)


class TestTools:
    def test_server_name(self):
        assert mcp.name == "mcp-spd-calibration"

    def test_photon_flux(self):
        assert photon_flux_tool(1e-14, 851.8)["photon_rate"] == pytest.approx(42881, rel=1e-4)
        failed = photon_flux_tool(-1.0, 851.8)
        assert failed["error_type"] == "InvalidArgumentError"

    def test_fiber_transmittance(self):
        result = fiber_transmittance_tool(1.45)
        assert result["eta_f"] == pytest.approx(0.966264, abs=1e-6)
        assert result["u"] == 1e-3

    def test_consensus(self):
        result = consensus_tool(["0.9235(30)", "0.9250(30)", "0.9218(29)"])
        assert result["mean"] == pytest.approx(0.92343, abs=1e-5)
        assert result["n_runs"] == 3
        assert result["level"] == 0.95
        assert consensus_tool(["0.9235(30)"])["error_type"] == "InsufficientDataError"
        assert consensus_tool(["0.9(3"])["error_type"] == "InvalidArgumentError"


@pytest.mark.integration
class TestSimulationTools:
    """Files produced by ``simulate_tool`` analysed by the other tools."""

    def test_power_then_allan(self, scenario_dir, tmp_path):
        written = simulate_tool(str(scenario_dir / "power_drift.toml"), seed=1, output_dir=str(tmp_path))
        assert written["kind"] == "power"
        rows = allan_tool(str(tmp_path / "pm.csv"), taus=[1.0, 2.0])["rows"]
        assert [r["tau_s"] for r in rows] == [1.0, 2.0]
        assert rows[0]["relative_percent"] == pytest.approx(0.1, rel=0.15)

    def test_campaign_then_de(self, scenario_dir, tmp_path):
        written = simulate_tool(str(scenario_dir / "fiber_851_spad.toml"), seed=2, output_dir=str(tmp_path))
        assert written["kind"] == "campaign"
        assert len(written["files"]) == 5
        result = de_tool(str(tmp_path / "scenario.toml"), rates=[1e5])
        assert result["constants_version"] == "fiber-851-v1"
        (estimate,) = result["estimates"]
        assert estimate["de"] == pytest.approx(0.556 * (1 - 52e-9 * 1e5), rel=0.02)

    def test_missing_scenario(self, tmp_path):
        result = simulate_tool(str(tmp_path / "absent.toml"), output_dir=str(tmp_path))
        assert result["error_type"] == "ParseError"
