"""
Tests for equal-weight pooling of repeated run results.
"""

import pytest

from spd_calibration.consensus import (
    RunResult,
    consensus,
    coverage_interval,
    mixture_cdf,
    pool_mean,
)
from spd_calibration.errors import InsufficientDataError, InvalidArgumentError
from spd_calibration.fileio import read_runs
from spd_calibration.quantities import Uncertain


def _runs(*texts):
    return [RunResult(Uncertain.parse(t), label=str(i)) for i, t in enumerate(texts)]


TI_SAPPHIRE = _runs("0.5525(40)", "0.5551(41)", "0.5517(40)", "0.5539(41)", "0.5529(41)")
CW_DIODE = _runs("0.5530(42)", "0.5507(41)", "0.5491(41)", "0.5464(41)", "0.5461(41)")
SPLICE = _runs("0.9235(30)", "0.9250(30)", "0.9218(29)")


class TestConsensus:
    """Pooled mean and coverage interval of published run groups."""

    def test_pooled_means(self):
        assert pool_mean(TI_SAPPHIRE) == pytest.approx(0.55322)
        assert pool_mean(CW_DIODE) == pytest.approx(0.54906)
        assert pool_mean(SPLICE) == pytest.approx(0.92343, abs=1e-5)

    def test_interval_ti_sapphire(self):
        result = consensus(TI_SAPPHIRE)
        assert result.lo == pytest.approx(0.5449, abs=3e-4)
        assert result.hi == pytest.approx(0.5615, abs=3e-4)
        assert result.relative_expanded == pytest.approx(1.50, abs=0.04)
        assert result.n_runs == 5

    def test_interval_splice(self):
        result = consensus(SPLICE)
        assert result.lo == pytest.approx(0.9171, abs=3e-4)
        assert result.hi == pytest.approx(0.9298, abs=3e-4)
        assert result.relative_expanded == pytest.approx(0.70, abs=0.03)

    def test_interval_cw_diode(self):
        result = consensus(CW_DIODE)
        assert result.lo == pytest.approx(0.5397, abs=3e-4)
        assert result.hi == pytest.approx(0.5587, abs=3e-4)
        assert result.relative_expanded == pytest.approx(1.78, abs=0.06)

    @pytest.mark.parametrize(
        "fixture, mean, lo, hi",
        [
            ("runs_spad_fiber_a.csv", 0.5811, 0.5708, 0.5911),
            ("runs_spad_fiber_b.csv", 0.5821, 0.5735, 0.5911),
            ("runs_snspd_851_splice.csv", 0.9178, 0.9066, 0.9292),
            ("runs_snspd_connector.csv", 0.8921, 0.8859, 0.8996),
        ],
    )
    def test_fiber_coupled_run_groups(self, data_dir, fixture, mean, lo, hi):
        runs = read_runs(data_dir / fixture)
        result = consensus(runs)
        assert result.n_runs == 3
        assert result.mean == pytest.approx(mean, abs=1e-4)
        assert result.lo == pytest.approx(lo, abs=1e-3)
        assert result.hi == pytest.approx(hi, abs=1e-3)
        half_width = (result.hi - result.lo) / 2
        assert result.relative_expanded == pytest.approx(100 * half_width / result.mean)

    def test_interval_is_probabilistically_symmetric(self):
        lo, hi = coverage_interval(CW_DIODE, level=0.95)
        assert mixture_cdf(lo, CW_DIODE) == pytest.approx(0.025, abs=1e-7)
        assert mixture_cdf(hi, CW_DIODE) == pytest.approx(0.975, abs=1e-7)
        assert lo < pool_mean(CW_DIODE) < hi

    def test_symmetric_components_about_zero(self):
        components = [Uncertain(-0.3, 0.1), Uncertain(0.3, 0.1)]
        assert pool_mean(components) == pytest.approx(0.0, abs=1e-15)
        assert mixture_cdf(0.0, components) == pytest.approx(0.5)
        lo, hi = coverage_interval(components, level=0.95)
        assert lo == pytest.approx(-hi, abs=1e-7)
        assert mixture_cdf(hi, components) == pytest.approx(0.975, abs=1e-7)

    def test_wider_level_widens_interval(self):
        narrow = consensus(SPLICE, level=0.68)
        wide = consensus(SPLICE, level=0.99)
        assert wide.lo < narrow.lo and narrow.hi < wide.hi

    def test_invalid_runs(self):
        with pytest.raises(InsufficientDataError):
            consensus(SPLICE[:1])
        with pytest.raises(InvalidArgumentError):
            RunResult(Uncertain(1.6, 0.01))
        with pytest.raises(InvalidArgumentError):
            RunResult(Uncertain(0.5, 0.0))
        with pytest.raises(InvalidArgumentError):
            coverage_interval(SPLICE, level=1.0)
        with pytest.raises(InvalidArgumentError):
            mixture_cdf(0.5, [Uncertain(0.5, 0.0), Uncertain(0.6, 0.01)])
