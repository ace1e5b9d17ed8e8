"""
Tests for the text-format readers and writers.
"""

import numpy as np
import pytest

from spd_calibration import fileio
from spd_calibration.errors import InvalidArgumentError, ParseError
from spd_calibration.quantities import Uncertain
from spd_calibration.ratecurve import RatePoint
from spd_calibration.schemas import CampaignScenario, PowerScenario, TimetagScenario
from spd_calibration.timetag import TimeTagStream


class TestTimeTags:
    def test_read(self, data_dir):
        stream = fileio.read_timetag(data_dir / "stream_small.txt")
        assert stream.ticks.tolist() == [0, 10, 25]
        assert stream.resolution == pytest.approx(1e-9)
        assert stream.duration == pytest.approx(1e-6)

    def test_unsorted_ticks(self, data_dir):
        with pytest.raises(ParseError) as info:
            fileio.read_timetag(data_dir / "stream_unsorted.txt")
        assert info.value.line == 5

    def test_non_numeric_tick(self, tmp_path):
        path = tmp_path / "letters.txt"
        path.write_text("# resolution_ps=1000\n# duration_s=1e-6\n0\n12a\n30\n")
        with pytest.raises(ParseError) as info:
            fileio.read_timetag(path)
        assert info.value.line == 4
        assert "unsigned decimal tick" in info.value.expected

    def test_header_only(self, tmp_path):
        path = tmp_path / "empty.txt"
        path.write_text("# resolution_ps=156.25\n# duration_s=1.0\n")
        stream = fileio.read_timetag(path)
        assert stream.n_events == 0

    def test_missing_header(self, tmp_path):
        path = tmp_path / "no_header.txt"
        path.write_text("0\n10\n")
        with pytest.raises(ParseError) as info:
            fileio.read_timetag(path)
        assert info.value.line == 1

    def test_write_is_byte_stable(self, tmp_path):
        stream = TimeTagStream(np.array([3, 7, 400]), 156.25e-12, 1e-6)
        first = fileio.write_timetag(stream, tmp_path / "a.txt")
        second = fileio.write_timetag(stream, tmp_path / "b.txt")
        assert first.read_bytes() == second.read_bytes()
        assert first.read_text().splitlines()[0] == "# resolution_ps=156.25"
        assert fileio.read_timetag(first).ticks.tolist() == [3, 7, 400]


class TestPowerCsv:
    def test_read_and_select(self, data_dir):
        frame = fileio.read_power_csv(data_dir / "monitor_small.csv")
        assert frame.attrs["unit"] == "W"
        assert fileio.select_readings(frame, "dut", dark=True).tolist() == [1e-9, 1e-9]
        assert fileio.select_readings(frame, "dut", t_start=3, t_stop=4).size == 2
        series = fileio.power_series(frame, "dut")
        assert len(series) == 4
        assert series.sample_interval == 1.0

    def test_two_reading_columns(self, tmp_path):
        path = tmp_path / "both.csv"
        path.write_text("t_s,reading_W,reading_V,range_id,dark\n0,1,1,dut,0\n")
        with pytest.raises(ParseError):
            fileio.read_power_csv(path)

    def test_bad_dark_flag(self, tmp_path):
        path = tmp_path / "flag.csv"
        path.write_text("t_s,reading_V,range_id,dark\n0,1.0,ratio,0\n1,1.0,ratio,2\n")
        with pytest.raises(ParseError) as info:
            fileio.read_power_csv(path)
        assert info.value.line == 3


class TestTables:
    """Counts, rate points and run results."""

    def test_non_integer_gate_count(self, data_dir):
        with pytest.raises(ParseError) as info:
            fileio.read_counts_csv(data_dir / "counts_bad_row.csv")
        assert info.value.line == 3
        assert "n_gates" in info.value.expected

    def test_missing_column(self, tmp_path):
        path = tmp_path / "counts.csv"
        path.write_text("setting_id,repeat\ns01,0\n")
        with pytest.raises(ParseError) as info:
            fileio.read_counts_csv(path)
        assert info.value.line == 1

    def test_blank_line(self, tmp_path):
        path = tmp_path / "points.csv"
        path.write_text("setting_id,rate_cps,de,u_de\ns01,1e4,0.55,0.004\n\ns02,1e5,0.55,0.004\n")
        with pytest.raises(ParseError) as info:
            fileio.read_rate_points(path)
        assert info.value.line == 3

    def test_rate_points(self, tmp_path):
        points = [RatePoint(1e4, Uncertain(0.556, 0.004), "s01"), RatePoint(1e5, Uncertain(0.553, 0.004), "s02")]
        path = fileio.write_rate_points(points, tmp_path / "points.csv")
        loaded = fileio.read_rate_points(path)
        assert [p.setting_id for p in loaded] == ["s01", "s02"]
        assert loaded[1].de == Uncertain(0.553, 0.004)

    def test_runs(self, data_dir):
        runs = fileio.read_runs(data_dir / "runs_snspd_splice.csv")
        assert [r.label for r in runs] == ["1", "2", "3"]
        assert runs[0].de == Uncertain(0.9235, 0.0030)
        assert runs[2].r_out_mon.value == pytest.approx(4.923e-6)
        assert runs[1].wavelength == Uncertain(1533.62, 0.01)

    def test_implausible_run(self, data_dir):
        with pytest.raises(ParseError) as info:
            fileio.read_runs(data_dir / "runs_bad_de.csv")
        assert info.value.line == 3


class TestScans:
    def test_read(self, data_dir):
        grid = fileio.read_scan(data_dir / "beam_scan.csv")
        assert grid.values.shape == (5, 5)
        assert grid.x_step == pytest.approx(2e-6)
        assert grid.values[2, 2] == 20.0

    def test_ragged(self, data_dir):
        with pytest.raises(ParseError) as info:
            fileio.read_scan(data_dir / "scan_ragged.csv")
        assert info.value.line == 3

    @pytest.mark.parametrize(
        "body, line, expected",
        [
            ("1,2,3\n4,x,6\n", 3, "numeric scan values"),
            ("1,2,3\n\n4,5,6\n", 3, "a row of scan values"),
            ("1 2 3\n4 5 6 7\n", 3, "3 values per row"),
        ],
    )
    def test_bad_rows(self, tmp_path, body, line, expected):
        path = tmp_path / "scan.csv"
        path.write_text("# x_step_um=2 y_step_um=2\n" + body)
        with pytest.raises(ParseError) as info:
            fileio.read_scan(path)
        assert info.value.line == line
        assert info.value.expected == expected

    def test_mixed_separators(self, tmp_path):
        path = tmp_path / "scan.csv"
        path.write_text("# x_step_um=1 y_step_um=3\n1, 2 3\n4,5,6\n")
        grid = fileio.read_scan(path)
        assert grid.values.tolist() == [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]
        assert grid.y_step == pytest.approx(3e-6)


class TestToml:
    """Calibration constants and scenarios."""

    def test_shipped_constants(self):
        versions = {
            name: fileio.load_constants(fileio.builtin_constants(name)).version
            for name in ("fiber_851", "fiber_1533", "freespace_851")
        }
        assert versions == {
            "fiber_851": "fiber-851-v1",
            "fiber_1533": "fiber-1533-v1",
            "freespace_851": "freespace-851-v1",
        }
        with pytest.raises(InvalidArgumentError):
            fileio.builtin_constants("fiber_9999")

    def test_constants_lookup(self, fiber_constants):
        assert fiber_constants.b_lambda_for("pm_mon", 851.73) == Uncertain(-0.01028, 0.00004)
        assert fiber_constants.b_lambda_for("pm_mon", 1533.6) == Uncertain(0.0, 0.0)
        with pytest.raises(InvalidArgumentError):
            fiber_constants.cal_nl_for("pm", "dut")

    def test_invalid_constants_line(self, tmp_path):
        path = tmp_path / "constants.toml"
        path.write_text('version = "x"\nmode = "fiber"\nstab_relative = -1.0\n')
        with pytest.raises(ParseError) as info:
            fileio.load_constants(path)
        assert info.value.line == 3

    def test_freespace_needs_trap_constants(self, tmp_path):
        path = tmp_path / "constants.toml"
        path.write_text('version = "x"\nmode = "free-space"\n')
        with pytest.raises(ParseError):
            fileio.load_constants(path)

    def test_resolve_constants(self, tmp_path):
        assert fileio.resolve_constants("fiber_851", tmp_path).name == "fiber_851.toml"
        local = tmp_path / "mine.toml"
        local.write_text("")
        assert fileio.resolve_constants("mine.toml", tmp_path) == local

    def test_simulation_scenarios(self, scenario_dir):
        kinds = {
            "fiber_851_spad.toml": CampaignScenario,
            "freespace_851_spad.toml": CampaignScenario,
            "bistable_dark.toml": CampaignScenario,
            "afterpulse_stream.toml": TimetagScenario,
            "power_drift.toml": PowerScenario,
        }
        for name, model in kinds.items():
            assert isinstance(fileio.load_simulation_scenario(scenario_dir / name), model)

    def test_unknown_kind(self, tmp_path):
        path = tmp_path / "scenario.toml"
        path.write_text('kind = "spectrum"\n')
        with pytest.raises(ParseError) as info:
            fileio.load_simulation_scenario(path)
        assert info.value.line == 1

    def test_scenario_written_and_loaded(self, tmp_path, fiber_scenario, fiber_constants):
        from spd_calibration.simulator import simulate_campaign

        campaign = simulate_campaign(fiber_scenario, fiber_constants, seed=0)
        scenario = campaign.analysis_scenario("constants.toml")
        path = fileio.write_scenario(scenario, tmp_path / "scenario.toml")
        loaded = fileio.load_scenario(path)
        assert loaded.base_dir == tmp_path
        assert loaded.model_dump() == scenario.model_dump()

    @pytest.mark.parametrize("name", ["fiber_851_spad.toml", "afterpulse_stream.toml", "power_drift.toml"])
    def test_simulation_scenario_round_trip(self, tmp_path, scenario_dir, name):
        original = fileio.load_simulation_scenario(scenario_dir / name)
        path = fileio.write_scenario(original, tmp_path / name)
        loaded = fileio.load_simulation_scenario(path)
        assert type(loaded) is type(original)
        assert loaded.model_dump() == original.model_dump()
        assert path.read_bytes() == fileio.write_scenario(loaded, tmp_path / "again.toml").read_bytes()

    def test_digest(self, data_dir):
        digest = fileio.file_digest(data_dir / "stream_small.txt")
        assert len(digest) == 64
        assert digest == fileio.file_digest(data_dir / "stream_small.txt")
