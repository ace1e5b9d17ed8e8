"""Value-plus-uncertainty carriers and the elementary photon arithmetic.

All uncertainties are standard uncertainties (k = 1) in the unit of the value.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.constants import h as PLANCK

from .errors import InvalidArgumentError

_CONCISE = re.compile(
    r"^\s*(?P<value>[-+]?\d+(?:\.(?P<decimals>\d+))?)\s*\(\s*(?P<u>\d+)\s*\)\s*$"
)


@dataclass(frozen=True)
class Uncertain:
    value: float
    u: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise InvalidArgumentError(f"value must be finite, got {self.value}")
        if not math.isfinite(self.u) or self.u < 0:
            raise InvalidArgumentError(f"standard uncertainty must be finite and >= 0, got {self.u}")

    @classmethod
    def from_relative(cls, value: float, relative: float) -> "Uncertain":
        return cls(value, abs(value) * relative)

    @classmethod
    def parse(cls, text: str) -> "Uncertain":
        """Read concise notation such as ``0.9235(30)`` or a bare number (u = 0)."""
        match = _CONCISE.match(text)
        if match is None:
            try:
                return cls(float(text), 0.0)
            except ValueError as exc:
                raise InvalidArgumentError(f"not a value(uncertainty) literal: {text!r}") from exc
        decimals = len(match.group("decimals") or "")
        return cls(float(match.group("value")), int(match.group("u")) * 10.0**-decimals)

    @property
    def relative(self) -> float:
        if self.value == 0:
            raise InvalidArgumentError("relative uncertainty is undefined at value 0")
        return self.u / abs(self.value)

    @property
    def relative_percent(self) -> float:
        return 100.0 * self.relative

    def scaled(self, factor: float) -> "Uncertain":
        return Uncertain(self.value * factor, self.u * abs(factor))

    def expand(self, k: float = 2.0) -> "ExpandedInterval":
        return expand(self, k)

    def format(self, digits: int = 2) -> str:
        """Concise notation with ``digits`` significant digits on the uncertainty."""
        if self.u == 0:
            return repr(self.value)
        exponent = math.floor(math.log10(self.u)) - (digits - 1)
        decimals = max(-exponent, 0)
        u_digits = round(self.u / 10.0**exponent) * (10**exponent if exponent > 0 else 1)
        return f"{self.value:.{decimals}f}({u_digits})"

    def __str__(self) -> str:
        return self.format()


@dataclass(frozen=True)
class CorrelatedPair:
    a: Uncertain
    b: Uncertain
    cov: float = 0.0

    def __post_init__(self):
        bound = self.a.u * self.b.u
        if abs(self.cov) > bound * (1 + 1e-12) + 1e-300:
            raise InvalidArgumentError(
                f"|cov| = {abs(self.cov):.6g} exceeds u(a)*u(b) = {bound:.6g}"
            )

    @property
    def correlation(self) -> float:
        bound = self.a.u * self.b.u
        return 0.0 if bound == 0 else self.cov / bound

    def covariance_matrix(self) -> np.ndarray:
        return np.array([[self.a.u**2, self.cov], [self.cov, self.b.u**2]])


@dataclass(frozen=True)
class WavelengthCorrection:
    """Additive wavelength-reading correction ``scale * b_lambda * delta_lambda``.

    ``b_lambda`` is a relative responsivity slope in nm^-1 and
    ``delta_lambda_osa`` the analyzer reading offset in nm.
    """

    b_lambda: Uncertain
    delta_lambda_osa: Uncertain
    scale: Uncertain

    @property
    def value(self) -> float:
        return self.scale.value * self.b_lambda.value * self.delta_lambda_osa.value

    @property
    def u(self) -> float:
        s, b, dl = self.scale, self.b_lambda, self.delta_lambda_osa
        return math.sqrt(
            (b.value * dl.value * s.u) ** 2
            + (s.value * dl.value * b.u) ** 2
            + (s.value * b.value * dl.u) ** 2
        )

    def as_uncertain(self) -> Uncertain:
        return Uncertain(self.value, self.u)


@dataclass(frozen=True)
class ExpandedInterval:
    value: float
    half_width: float
    k: float

    @property
    def lo(self) -> float:
        return self.value - self.half_width

    @property
    def hi(self) -> float:
        return self.value + self.half_width

    @property
    def width(self) -> float:
        return 2.0 * self.half_width

    @property
    def relative_percent(self) -> float:
        if self.value == 0:
            raise InvalidArgumentError("relative expanded uncertainty is undefined at value 0")
        return 100.0 * self.half_width / abs(self.value)


def expand(x: Uncertain, k: float = 2.0) -> ExpandedInterval:
    if not k > 0:
        raise InvalidArgumentError(f"coverage factor must be positive, got {k}")
    return ExpandedInterval(x.value, k * x.u, k)


def quadrature(*terms: float) -> float:
    return float(np.sqrt(np.sum(np.square(np.asarray(terms, dtype=float)))))


def photon_energy(wavelength: float) -> float:
    if not wavelength > 0:
        raise InvalidArgumentError(f"wavelength must be positive, got {wavelength}")
    return PLANCK * SPEED_OF_LIGHT / wavelength


def photon_flux(power: float, wavelength: float) -> float:
    """Photons per second carried by ``power`` watts at ``wavelength`` metres."""
    if power < 0:
        raise InvalidArgumentError(f"power must be non-negative, got {power}")
    return power / photon_energy(wavelength)


def fiber_end_transmittance(n_eff: float, u: float = 1e-3) -> Uncertain:
    """Fresnel transmittance of an uncoated fiber end at normal incidence."""
    if n_eff < 1:
        raise InvalidArgumentError(f"effective index must be >= 1, got {n_eff}")
    reflectance = ((n_eff - 1.0) / (n_eff + 1.0)) ** 2
    return Uncertain(1.0 - reflectance, u)
