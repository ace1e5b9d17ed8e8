"""Time-tag stream analysis.

Interarrival-sum histograms, dead-time and afterpulse estimation, the linear
afterpulse-probability model and the non-paralyzable blocking-loss formula.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from loguru import logger
from scipy import stats

from .errors import (
    FitError,
    InsufficientDataError,
    InvalidArgumentError,
    SaturationError,
)
from .fitting import LinearFit, fit_line
from .quantities import Uncertain

DEFAULT_WINDOW = 1e-6
DEFAULT_BASELINE_START = 500e-9
DEFAULT_THRESHOLD_FRACTION = 0.5
MIN_BASELINE_BINS = 10

_EPS = 1e-9


@dataclass(frozen=True)
class TimeTagStream:
    ticks: np.ndarray
    resolution: float
    duration: float

    def __post_init__(self):
        ticks = np.asarray(self.ticks, dtype=np.int64)
        if not self.resolution > 0:
            raise InvalidArgumentError(f"tick resolution must be positive, got {self.resolution}")
        if self.duration < 0:
            raise InvalidArgumentError(f"duration must be non-negative, got {self.duration}")
        if ticks.ndim != 1:
            raise InvalidArgumentError("ticks must be one-dimensional")
        if ticks.size:
            if ticks[0] < 0:
                raise InvalidArgumentError("ticks must be non-negative")
            if np.any(np.diff(ticks) <= 0):
                raise InvalidArgumentError("ticks must be strictly increasing")
            if ticks[-1] * self.resolution > self.duration * (1 + 1e-12):
                raise InvalidArgumentError(
                    f"last tick at {ticks[-1] * self.resolution:.9g} s is beyond duration {self.duration} s"
                )
        ticks.flags.writeable = False
        object.__setattr__(self, "ticks", ticks)

    @property
    def n_events(self) -> int:
        return int(self.ticks.size)

    @property
    def times(self) -> np.ndarray:
        return self.ticks * self.resolution

    @property
    def rate(self) -> float:
        if self.duration == 0:
            raise InvalidArgumentError("rate is undefined for a zero-duration stream")
        return self.n_events / self.duration


@dataclass(frozen=True)
class IntervalHistogram:
    """Pair counts per delay bin.

    ``resolution`` is the tick of the quantized delays, or 0 for continuous
    ones; bin ``k`` then holds delays averaging
    ``k * bin_width + (bin_width - resolution) / 2``.
    """

    bin_width: float
    counts: np.ndarray
    window: float
    n_events: int
    resolution: float = 0.0

    @property
    def n_bins(self) -> int:
        return int(self.counts.size)

    @property
    def bin_starts(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.bin_width

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def index_at(self, t: float) -> int:
        """Index of the first bin starting at or after ``t``."""
        return int(math.ceil(t / self.bin_width - _EPS))

    @property
    def bin_centers(self) -> np.ndarray:
        return self.bin_starts + 0.5 * (self.bin_width - self.resolution)


@dataclass(frozen=True)
class DeadTimeEstimate:
    detected: bool
    dead_time: Uncertain | None
    first_bin: int
    reference_level: float
    threshold_fraction: float

    def __str__(self) -> str:
        if not self.detected:
            return "no dead time"
        return f"{self.dead_time.value * 1e9:.4f}({self.dead_time.u * 1e9:.4f}) ns"


@dataclass(frozen=True)
class AfterpulseEstimate:
    probability: Uncertain
    excess_counts: Uncertain
    baseline: float
    excess_to_baseline: float
    n_baseline_bins: int
    n_excess_bins: int
    n_events: int


@dataclass(frozen=True)
class AfterpulseModel:
    ap0: Uncertain
    ap: Uncertain
    cov_ap0_ap: float
    rate_min: float
    rate_max: float
    fit: LinearFit = field(repr=False)
    warnings: tuple[str, ...] = ()

    @classmethod
    def from_coefficients(
        cls,
        ap0: Uncertain,
        ap: Uncertain,
        cov: float = 0.0,
        rate_min: float = 0.0,
        rate_max: float = math.inf,
    ) -> "AfterpulseModel":
        """Model from previously characterized coefficients rather than a fresh fit."""
        covariance = np.array([[ap0.u**2, cov], [cov, ap.u**2]])
        fit = LinearFit(ap0.value, ap.value, covariance, 0, math.nan, True)
        return cls(ap0, ap, cov, rate_min, rate_max, fit)

    def probability(self, rate: float) -> Uncertain:
        return Uncertain(float(self.fit.predict(rate)), float(self.fit.prediction_u(rate)))

    def band(self, rate, level: float = 0.95):
        return self.fit.band(rate, level)

    def covers(self, ap0: float, ap: float, level: float = 0.95) -> bool:
        """True when ``(ap0, ap)`` lies inside the joint confidence ellipse."""
        delta = np.array([ap0 - self.ap0.value, ap - self.ap.value])
        cov = np.array(
            [[self.ap0.u**2, self.cov_ap0_ap], [self.cov_ap0_ap, self.ap.u**2]]
        )
        chi2 = float(delta @ np.linalg.solve(cov, delta))
        return chi2 <= stats.chi2.ppf(level, df=2)


def interarrival_sum_histogram(
    stream: TimeTagStream,
    bin_width: float | None = None,
    window: float = DEFAULT_WINDOW,
) -> IntervalHistogram:
    """Histogram the delays between every event and all later events within ``window``."""
    if stream.n_events == 0:
        raise InsufficientDataError("time-tag stream is empty")
    if bin_width is None:
        bin_width = stream.resolution
    if bin_width < stream.resolution * (1 - _EPS):
        raise InvalidArgumentError(
            f"bin width {bin_width} s is finer than the tick resolution {stream.resolution} s"
        )
    if window < bin_width:
        raise InvalidArgumentError(f"window {window} s is shorter than bin width {bin_width} s")
    if window > stream.duration:
        logger.warning(f"histogram window {window} s exceeds stream duration {stream.duration} s")

    n_bins = int(math.floor(window / bin_width + _EPS)) + 1
    window_ticks = int(math.floor(window / stream.resolution + _EPS))
    ratio = bin_width / stream.resolution
    integer_ratio = round(ratio) if abs(ratio - round(ratio)) < 1e-9 else None

    ticks = stream.ticks
    counts = np.zeros(n_bins, dtype=np.int64)
    for offset in itertools.count(1):
        if offset >= ticks.size:
            break
        gaps = ticks[offset:] - ticks[:-offset]
        gaps = gaps[gaps <= window_ticks]
        # gaps only grow with the offset, so the first empty offset ends the scan
        if gaps.size == 0:
            break
        if integer_ratio is not None:
            index = gaps // integer_ratio
        else:
            index = np.floor(gaps / ratio + _EPS).astype(np.int64)
        counts += np.bincount(index, minlength=n_bins)[:n_bins]

    logger.debug(f"histogrammed {counts.sum()} pairs from {stream.n_events} events")
    return IntervalHistogram(
        bin_width=float(bin_width),
        counts=counts,
        window=float(window),
        n_events=stream.n_events,
        resolution=float(stream.resolution),
    )


def estimate_dead_time(
    hist: IntervalHistogram,
    threshold_fraction: float = DEFAULT_THRESHOLD_FRACTION,
    baseline_start: float = DEFAULT_BASELINE_START,
) -> DeadTimeEstimate:
    """Turn-on time where the counts first rise above ``threshold_fraction`` of the baseline.

    The baseline is the mean count of bins starting at or after
    ``baseline_start``; when that tail is empty the largest bin is used. The
    edge is the start of the bin after that first bin, moved earlier by the
    counts of the first bin and the one before it, in units of the next bin's
    count. A turn-on inside a bin is then recovered rather than rounded to a
    bin boundary.
    """
    if not 0 < threshold_fraction < 1:
        raise InvalidArgumentError(f"threshold fraction must be in (0, 1), got {threshold_fraction}")
    counts = hist.counts
    tail = counts[hist.index_at(baseline_start):]
    reference = float(tail.mean()) if tail.size else 0.0
    if reference == 0.0:
        reference = float(counts.max())
    if reference == 0.0:
        raise InsufficientDataError("histogram has no counts")

    level = threshold_fraction * reference
    first = int(np.flatnonzero(counts > level)[0])
    if first == 0:
        logger.info("histogram is populated from the first bin: no dead time detected")
        return DeadTimeEstimate(False, None, 0, reference, threshold_fraction)
    after = float(counts[first + 1]) if first + 1 < hist.n_bins else 0.0
    if after <= 0:
        after = float(counts[first])
    filled = float(np.clip((counts[first - 1] + counts[first]) / after, 0.0, 2.0))
    edge = hist.bin_centers[first] + 0.5 * hist.bin_width - filled * hist.bin_width
    dead_time = Uncertain(float(max(edge, 0.0)), hist.bin_width)
    return DeadTimeEstimate(True, dead_time, first, reference, threshold_fraction)


def _dead_time_seconds(dead_time) -> float:
    if isinstance(dead_time, DeadTimeEstimate):
        return dead_time.dead_time.value if dead_time.detected else 0.0
    if isinstance(dead_time, Uncertain):
        return dead_time.value
    return float(dead_time)


def afterpulse_probability(
    hist: IntervalHistogram,
    baseline_start: float = DEFAULT_BASELINE_START,
    dead_time: DeadTimeEstimate | Uncertain | float = 0.0,
    min_baseline_bins: int = MIN_BASELINE_BINS,
) -> AfterpulseEstimate:
    """Afterpulse counts above the baseline per detected event.

    Counts in ``[dead_time, baseline_start)`` have the baseline subtracted bin by
    bin without clipping, so pure noise sums to zero on average.
    An estimated dead time starts the sum at its first bin above the threshold.
    """
    dead = _dead_time_seconds(dead_time)
    if not baseline_start < hist.window:
        raise InvalidArgumentError(
            f"baseline start {baseline_start} s must be below the window {hist.window} s"
        )
    if not dead < baseline_start:
        raise InvalidArgumentError(
            f"dead time {dead} s must be below the baseline start {baseline_start} s"
        )
    if hist.n_events == 0:
        raise InsufficientDataError("histogram has no source events")

    if isinstance(dead_time, DeadTimeEstimate) and dead_time.detected:
        start = dead_time.first_bin
    else:
        start = int(math.floor(dead / hist.bin_width + _EPS))
    stop = hist.index_at(baseline_start)
    base = hist.counts[stop:]
    if base.size < min_baseline_bins:
        raise InsufficientDataError(
            f"only {base.size} baseline bins beyond {baseline_start} s; need {min_baseline_bins}"
        )
    baseline = float(base.mean())
    region = hist.counts[start:stop].astype(float)
    n_excess = region.size
    excess = float(np.sum(region - baseline))
    variance = float(region.sum()) + n_excess**2 * baseline / base.size

    excess_counts = Uncertain(excess, math.sqrt(variance))
    probability = excess_counts.scaled(1.0 / hist.n_events)
    denominator = baseline * n_excess
    ratio = excess / denominator if denominator > 0 else float("nan")
    logger.debug(
        f"afterpulse excess {excess:.1f} counts over {n_excess} bins, baseline {baseline:.3f}/bin"
    )
    return AfterpulseEstimate(
        probability=probability,
        excess_counts=excess_counts,
        baseline=baseline,
        excess_to_baseline=ratio,
        n_baseline_bins=int(base.size),
        n_excess_bins=int(n_excess),
        n_events=hist.n_events,
    )


def fit_afterpulse_model(points: Sequence[tuple[float, Uncertain]]) -> AfterpulseModel:
    """Weighted straight-line fit ``p = ap0 + ap * rate``."""
    if len(points) < 3:
        raise InsufficientDataError(f"need at least 3 (rate, p) points, got {len(points)}")
    rates = np.array([float(r) for r, _ in points])
    values = np.array([p.value for _, p in points])
    sigmas = np.array([p.u for _, p in points])
    if np.unique(rates).size < 2:
        raise FitError("all afterpulse points share one count rate")
    if np.all(sigmas > 0):
        fit = fit_line(rates, values, sigma=sigmas)
    else:
        logger.warning("afterpulse points without uncertainty; using an unweighted fit")
        fit = fit_line(rates, values)

    lo, hi = float(rates.min()), float(rates.max())
    warnings = []
    for rate in (lo, hi):
        p = float(fit.predict(rate))
        u = float(fit.prediction_u(rate))
        if p >= 1:
            raise FitError(f"afterpulse model predicts p = {p:.4g} >= 1 at {rate:.4g} cnt/s")
        if p < 0:
            if p + 2 * u < 0:
                raise FitError(f"afterpulse model predicts p = {p:.4g} < 0 at {rate:.4g} cnt/s")
            warnings.append(f"predicted p = {p:.3g} is negative within noise at {rate:.4g} cnt/s")
    for message in warnings:
        logger.warning(message)

    return AfterpulseModel(
        ap0=Uncertain(fit.intercept, fit.u_intercept),
        ap=Uncertain(fit.slope, fit.u_slope),
        cov_ap0_ap=fit.cov,
        rate_min=lo,
        rate_max=hi,
        fit=fit,
        warnings=tuple(warnings),
    )


@dataclass(frozen=True)
class BlockingLoss:
    incident_rate: float
    exact_fraction: float
    linear_fraction: float
    deviation: float


def blocking_loss_deviation(detected_rate: float, dead_time: float) -> BlockingLoss:
    """Non-paralyzable transmitted fraction against its linear approximation."""
    if detected_rate < 0 or dead_time < 0:
        raise InvalidArgumentError("detected rate and dead time must be non-negative")
    load = detected_rate * dead_time
    if load >= 1:
        raise SaturationError(f"detected rate x dead time = {load:.4g} >= 1")
    incident = detected_rate / (1.0 - load)
    exact = 1.0 / (1.0 + incident * dead_time)
    linear = 1.0 - incident * dead_time
    return BlockingLoss(
        incident_rate=incident,
        exact_fraction=exact,
        linear_fraction=linear,
        deviation=abs(exact - linear) / exact,
    )
