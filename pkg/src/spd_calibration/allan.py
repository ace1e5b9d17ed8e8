"""Allan deviation of power readings and of power ratios.

Raw readings are treated as the process itself, not as first differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import InsufficientDataError, InvalidArgumentError


@dataclass(frozen=True)
class SampledSeries:
    values: np.ndarray
    sample_interval: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise InsufficientDataError("a sampled series needs at least 2 values")
        if not self.sample_interval > 0:
            raise InvalidArgumentError(
                f"sample interval must be positive, got {self.sample_interval}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("series contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    def max_tau(self, overlapping: bool = True) -> float:
        # overlapping needs N >= 2m + 1, non-overlapping needs N >= 2m
        n = len(self)
        m = (n - 1) // 2 if overlapping else n // 2
        return m * self.sample_interval


def _averaging_factor(series: SampledSeries, tau: float) -> int:
    m = tau / series.sample_interval
    m_int = int(round(m))
    if m_int < 1 or abs(m - m_int) > 1e-9 * max(1.0, m):
        raise InvalidArgumentError(
            f"tau {tau} s is not a positive multiple of the sample interval {series.sample_interval} s"
        )
    return m_int


def allan_deviation(series: SampledSeries, tau: float, overlapping: bool = True) -> float:
    """Allan deviation at averaging time ``tau``.

    The overlapping estimator averages every pair of adjacent m-sample means,
    ``sigma^2 = mean((ybar[i+m] - ybar[i])^2) / 2``. The non-overlapping form
    uses only disjoint consecutive blocks.
    """
    m = _averaging_factor(series, tau)
    n = len(series)
    needed = 2 * m + 1 if overlapping else 2 * m
    if n < needed:
        raise InsufficientDataError(
            f"{n} samples are too few for tau = {tau} s; "
            f"max feasible tau is {series.max_tau(overlapping)} s"
        )
    y = series.values - series.values.mean()
    if overlapping:
        csum = np.concatenate([[0.0], np.cumsum(y)])
        averages = (csum[m:] - csum[:-m]) / m
        diffs = averages[m:] - averages[:-m]
    else:
        blocks = n // m
        averages = y[: blocks * m].reshape(blocks, m).mean(axis=1)
        diffs = np.diff(averages)
    return float(math.sqrt(0.5 * np.mean(diffs**2)))


def relative_allan(
    series: SampledSeries, taus: Iterable[float], overlapping: bool = True
) -> list[tuple[float, float]]:
    """``(tau, 100 * sigma(tau) / mean)`` for each requested tau."""
    mean = series.mean
    if mean == 0:
        raise InvalidArgumentError("relative Allan deviation is undefined for a zero-mean series")
    return [
        (float(tau), 100.0 * allan_deviation(series, tau, overlapping) / abs(mean))
        for tau in taus
    ]


def octave_taus(series: SampledSeries, overlapping: bool = True) -> list[float]:
    """Powers-of-two multiples of the sample interval up to the feasible maximum."""
    max_m = int(round(series.max_tau(overlapping) / series.sample_interval))
    taus = []
    m = 1
    while m <= max_m:
        taus.append(m * series.sample_interval)
        m *= 2
    return taus


def ratio_series(a: SampledSeries, b: SampledSeries) -> SampledSeries:
    if len(a) != len(b):
        raise InvalidArgumentError(f"series lengths differ: {len(a)} vs {len(b)}")
    if not math.isclose(a.sample_interval, b.sample_interval, rel_tol=1e-12):
        raise InvalidArgumentError("series sample intervals differ")
    if np.any(b.values == 0):
        raise InvalidArgumentError("denominator series contains zeros")
    return SampledSeries(a.values / b.values, a.sample_interval)
