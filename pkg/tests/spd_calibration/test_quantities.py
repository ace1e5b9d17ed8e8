"""
Tests for the value-plus-uncertainty carriers and photon arithmetic.
"""

import math

import pytest

from spd_calibration.errors import InvalidArgumentError
from spd_calibration.quantities import (
    CorrelatedPair,
    Uncertain,
    WavelengthCorrection,
    expand,
    fiber_end_transmittance,
    photon_flux,
    quadrature,
)


class TestUncertain:
    """Construction, notation and expansion."""

    def test_concise_notation(self):
        q = Uncertain.parse("0.9235(30)")
        assert q.value == pytest.approx(0.9235)
        assert q.u == pytest.approx(0.0030)

        q = Uncertain.parse("4.767(10)")
        assert q.u == pytest.approx(0.010)

        assert Uncertain.parse("1533.62").u == 0.0

    def test_format_two_digits(self):
        assert Uncertain(0.92343, 0.0030).format() == "0.9234(30)"
        assert Uncertain(0.5530, 0.0042).format() == "0.5530(42)"

    def test_bad_values_rejected(self):
        with pytest.raises(InvalidArgumentError):
            Uncertain(1.0, -0.1)
        with pytest.raises(InvalidArgumentError):
            Uncertain(math.nan, 0.1)
        with pytest.raises(InvalidArgumentError):
            Uncertain.parse("0.9(3")
        with pytest.raises(InvalidArgumentError):
            Uncertain(0.0, 0.1).relative

    def test_expand(self):
        interval = expand(Uncertain(0.5, 0.004), k=2)
        assert interval.lo == pytest.approx(0.492)
        assert interval.hi == pytest.approx(0.508)
        assert interval.relative_percent == pytest.approx(1.6)
        with pytest.raises(InvalidArgumentError):
            expand(Uncertain(0.5, 0.004), k=0)

    def test_scaled_keeps_relative(self):
        q = Uncertain(2.0, 0.02).scaled(-3.0)
        assert q.value == -6.0
        assert q.relative == pytest.approx(0.01)


class TestCorrelatedPair:
    def test_cauchy_schwarz(self):
        a, b = Uncertain(0.002, 2e-4), Uncertain(1e-9, 1e-10)
        assert CorrelatedPair(a, b, -1e-14).correlation == pytest.approx(-0.5)
        with pytest.raises(InvalidArgumentError):
            CorrelatedPair(a, b, 3e-14)


class TestPhotonArithmetic:
    """Photon flux, Fresnel transmittance and wavelength corrections."""

    def test_photon_flux(self):
        assert photon_flux(1e-14, 851.8e-9) == pytest.approx(42881, rel=1e-4)
        assert photon_flux(1e-14, 1533.6e-9) == pytest.approx(77203, rel=1e-4)
        assert photon_flux(0.0, 851.8e-9) == 0.0
        with pytest.raises(InvalidArgumentError):
            photon_flux(-1e-14, 851.8e-9)
        with pytest.raises(InvalidArgumentError):
            photon_flux(1e-14, 0.0)

    def test_fiber_end_transmittance(self):
        eta = fiber_end_transmittance(1.45)
        assert eta.value == pytest.approx(0.966264, abs=1e-6)
        assert eta.u == 1e-3
        assert fiber_end_transmittance(1.0).value == 1.0
        with pytest.raises(InvalidArgumentError):
            fiber_end_transmittance(0.9)

    def test_wavelength_correction_propagation(self):
        corr = WavelengthCorrection(
            b_lambda=Uncertain(-0.01028, 0.00004),
            delta_lambda_osa=Uncertain(0.0, 0.1),
            scale=Uncertain(1e-4, 0.0),
        )
        assert corr.value == 0.0
        # only the offset term survives at zero offset
        assert corr.u == pytest.approx(1e-4 * 0.01028 * 0.1)

    def test_quadrature(self):
        assert quadrature(3.0, 4.0) == pytest.approx(5.0)
        assert quadrature() == 0.0
