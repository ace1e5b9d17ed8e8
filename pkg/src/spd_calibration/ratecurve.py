"""DE versus count rate: per-setting aggregation, the linear fit, and evaluation
at reference rates.

The combined uncertainty at a reference rate is the quadrature sum of the mean
per-point uncertainty and the fit's mean-response uncertainty there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from loguru import logger
from scipy import stats

from .errors import InsufficientDataError, InvalidArgumentError
from .fitting import LinearFit, fit_line
from .quantities import ExpandedInterval, Uncertain, expand

MEAN_UNCERTAINTY_RULE = "arithmetic mean of per-point k=1 uncertainties"


@dataclass(frozen=True)
class RatePoint:
    rate: float
    de: Uncertain
    setting_id: str = ""
    u_stat: float | None = None

    def __post_init__(self):
        if not self.rate > 0:
            raise InvalidArgumentError(f"count rate must be positive, got {self.rate}")
        if not 0 < self.de.value < 1.5:
            raise InvalidArgumentError(f"DE {self.de.value} is outside (0, 1.5)")


@dataclass(frozen=True)
class SettingMean:
    setting_id: str
    rate: float
    de: float
    n_points: int


@dataclass(frozen=True)
class RateCurveFit:
    intercept: Uncertain
    slope: Uncertain
    cov: float
    n_points: int
    weighted: bool
    rate_min: float
    rate_max: float
    fit: LinearFit = field(repr=False)

    def predict(self, rate: float) -> Uncertain:
        return Uncertain(float(self.fit.predict(rate)), float(self.fit.prediction_u(rate)))


@dataclass(frozen=True)
class RateEstimate:
    target_rate: float
    de: Uncertain
    mean_point_u: float
    prediction_u: float
    far_extrapolation: bool = False

    def expanded(self, k: float = 2.0) -> ExpandedInterval:
        return expand(self.de, k)


def aggregate_by_setting(points: Sequence[RatePoint]) -> list[SettingMean]:
    """Arithmetic means of rate and DE per setting, in order of first appearance."""
    groups: dict[str, list[RatePoint]] = {}
    for point in points:
        groups.setdefault(point.setting_id, []).append(point)
    return [
        SettingMean(
            setting_id=sid,
            rate=float(np.mean([p.rate for p in group])),
            de=float(np.mean([p.de.value for p in group])),
            n_points=len(group),
        )
        for sid, group in groups.items()
    ]


def fit_rate_curve(points: Sequence[RatePoint], weighted: bool = False) -> RateCurveFit:
    """Least-squares line ``DE = a + b * rate``; unweighted unless ``weighted``."""
    if len(points) < 3:
        raise InsufficientDataError(f"need at least 3 rate points, got {len(points)}")
    rates = np.array([p.rate for p in points])
    values = np.array([p.de.value for p in points])
    sigma = np.array([p.de.u for p in points]) if weighted else None
    fit = fit_line(rates, values, sigma=sigma)
    logger.debug(
        f"rate curve ({'weighted' if weighted else 'unweighted'}): "
        f"a = {fit.intercept:.6g}, b = {fit.slope:.6g} per cnt/s"
    )
    return RateCurveFit(
        intercept=Uncertain(fit.intercept, fit.u_intercept),
        slope=Uncertain(fit.slope, fit.u_slope),
        cov=fit.cov,
        n_points=len(points),
        weighted=weighted,
        rate_min=float(rates.min()),
        rate_max=float(rates.max()),
        fit=fit,
    )


def de_at_rate(
    fit: RateCurveFit,
    points: Sequence[RatePoint],
    target_rate: float,
    far_factor: float = 10.0,
) -> RateEstimate:
    if not points:
        raise InsufficientDataError("no rate points")
    mean_u = float(np.mean([p.de.u for p in points]))
    prediction = fit.predict(target_rate)
    far = target_rate > far_factor * fit.rate_max
    if far:
        logger.warning(
            f"target rate {target_rate:.4g} cnt/s is more than {far_factor:g}x the highest "
            f"fitted rate {fit.rate_max:.4g} cnt/s"
        )
    return RateEstimate(
        target_rate=float(target_rate),
        de=Uncertain(prediction.value, math.hypot(mean_u, prediction.u)),
        mean_point_u=mean_u,
        prediction_u=prediction.u,
        far_extrapolation=far,
    )


def exclude_above(points: Sequence[RatePoint], cutoff: float) -> list[RatePoint]:
    kept = [p for p in points if p.rate <= cutoff]
    logger.info(f"excluded {len(points) - len(kept)} points above {cutoff:.4g} cnt/s")
    return kept


def flag_outliers(points: Sequence[RatePoint], k: float = 3.0) -> list[bool]:
    """Flag points whose residual from a robust (Theil-Sen) line exceeds ``k``
    times their statistical uncertainty.
    """
    if len(points) < 3:
        return [False] * len(points)
    rates = np.array([p.rate for p in points])
    values = np.array([p.de.value for p in points])
    scale = np.array([p.u_stat if p.u_stat is not None else p.de.u for p in points])
    slope, intercept, _, _ = stats.theilslopes(values, rates)
    residuals = values - (intercept + slope * rates)
    flags = (scale > 0) & (np.abs(residuals) > k * scale)
    for point, flagged, res in zip(points, flags, residuals):
        if flagged:
            logger.warning(
                f"setting {point.setting_id} at {point.rate:.4g} cnt/s deviates by {res:+.3g} "
                f"from the robust rate curve"
            )
    return [bool(f) for f in flags]
