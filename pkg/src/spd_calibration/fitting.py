"""Straight-line least squares shared by the afterpulse and rate-curve fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import FitError, InsufficientDataError


@dataclass(frozen=True)
class LinearFit:
    intercept: float
    slope: float
    covariance: np.ndarray
    n_points: int
    residual_variance: float
    weighted: bool

    @property
    def u_intercept(self) -> float:
        return float(np.sqrt(self.covariance[0, 0]))

    @property
    def u_slope(self) -> float:
        return float(np.sqrt(self.covariance[1, 1]))

    @property
    def cov(self) -> float:
        return float(self.covariance[0, 1])

    @property
    def dof(self) -> int:
        return self.n_points - 2

    def predict(self, x):
        return self.intercept + self.slope * np.asarray(x, dtype=float)

    def prediction_u(self, x):
        """Standard uncertainty of the fitted mean response at ``x``."""
        x = np.asarray(x, dtype=float)
        var = (
            self.covariance[0, 0]
            + x**2 * self.covariance[1, 1]
            + 2.0 * x * self.covariance[0, 1]
        )
        return np.sqrt(np.clip(var, 0.0, None))

    def coverage_factor(self, level: float) -> float:
        # absolute sigmas make the weighted parameters Gaussian; otherwise Student t
        if self.weighted or self.dof <= 0:
            return float(stats.norm.ppf(0.5 + level / 2.0))
        return float(stats.t.ppf(0.5 + level / 2.0, self.dof))

    def band(self, x, level: float = 0.95):
        """Lower and upper confidence band of the mean response."""
        k = self.coverage_factor(level)
        center = self.predict(x)
        half = k * self.prediction_u(x)
        return center - half, center + half


def fit_line(x, y, sigma=None, min_points: int = 3) -> LinearFit:
    """Fit ``y = a + b x``.

    Without ``sigma`` this is ordinary least squares with covariance
    ``s^2 (X^T X)^-1``. With ``sigma`` the weights are ``1/sigma^2`` and the
    sigmas are taken as absolute, so the covariance is ``(X^T W X)^-1``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n < min_points:
        raise InsufficientDataError(f"need at least {min_points} points for a line fit, got {n}")
    if np.unique(x).size < 2:
        raise FitError("all abscissae are equal; slope is not identifiable")

    # rates span 0..1e6, so the design is conditioned on a rescaled abscissa
    scale = float(np.max(np.abs(x))) or 1.0
    design = np.column_stack([np.ones(n), x / scale])
    if sigma is None:
        weights = np.ones(n)
    else:
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
            raise FitError("weighted fit needs finite, strictly positive sigmas")
        weights = 1.0 / sigma**2

    normal = design.T @ (weights[:, None] * design)
    if np.linalg.matrix_rank(normal) < 2:
        raise FitError("design matrix is rank deficient")
    try:
        normal_inv = np.linalg.inv(normal)
    except np.linalg.LinAlgError as exc:
        raise FitError(f"normal equations are singular: {exc}") from exc

    params = normal_inv @ design.T @ (weights * y)
    residuals = y - design @ params
    dof = n - 2
    if sigma is None:
        residual_variance = float(residuals @ residuals / dof)
        covariance = residual_variance * normal_inv
    else:
        residual_variance = float((weights * residuals) @ residuals / dof)
        covariance = normal_inv

    back = np.diag([1.0, 1.0 / scale])
    return LinearFit(
        intercept=float(params[0]),
        slope=float(params[1] / scale),
        covariance=back @ covariance @ back,
        n_points=n,
        residual_variance=residual_variance,
        weighted=sigma is not None,
    )
