"""Statistics of 2-D beam and detector-uniformity scans.

Pixels are classified in or out of a circle by the distance of their centers;
there is no partial-area weighting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, InvalidArgumentError

MIN_REGION_PIXELS = 5


@dataclass(frozen=True)
class ScanGrid:
    """Row-major scan values; row index runs along y, column index along x."""

    values: np.ndarray
    x_step: float
    y_step: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.size == 0:
            raise InvalidArgumentError("scan values must be a non-empty 2-D array")
        if not (self.x_step > 0 and self.y_step > 0):
            raise InvalidArgumentError("scan steps must be positive")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise InvalidArgumentError("scan values must be finite and non-negative")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        ny, nx = self.values.shape
        x = self.origin[0] + np.arange(nx) * self.x_step
        y = self.origin[1] + np.arange(ny) * self.y_step
        return np.meshgrid(x, y)

    def distances(self, center: tuple[float, float]) -> np.ndarray:
        xx, yy = self.coordinates
        return np.hypot(xx - center[0], yy - center[1])

    def scaled(self, factor: float) -> "ScanGrid":
        return ScanGrid(self.values * factor, self.x_step, self.y_step, self.origin)


def centroid(grid: ScanGrid) -> tuple[float, float]:
    total = grid.values.sum()
    if total == 0:
        raise InvalidArgumentError("scan has zero total intensity")
    xx, yy = grid.coordinates
    return float((xx * grid.values).sum() / total), float((yy * grid.values).sum() / total)


def half_max_centroid(grid: ScanGrid) -> tuple[float, float]:
    """Geometric centroid of the pixels at or above half the maximum."""
    peak = grid.values.max()
    if peak == 0:
        raise InvalidArgumentError("scan has zero total intensity")
    xx, yy = grid.coordinates
    support = grid.values >= peak / 2.0
    return float(xx[support].mean()), float(yy[support].mean())


def _check_circle(grid: ScanGrid, center: tuple[float, float], d: float) -> np.ndarray:
    if not d > 0:
        raise InvalidArgumentError(f"diameter must be positive, got {d}")
    xx, yy = grid.coordinates
    nearest_x = np.clip(center[0], xx.min(), xx.max())
    nearest_y = np.clip(center[1], yy.min(), yy.max())
    if np.hypot(nearest_x - center[0], nearest_y - center[1]) > d / 2.0:
        raise InvalidArgumentError("circle does not intersect the scan grid")
    return grid.distances(center)


def fraction_outside_diameter(
    grid: ScanGrid, d: float, center: tuple[float, float] | None = None
) -> float:
    """Fraction of the summed signal at pixels farther than ``d/2`` from ``center``.

    ``center`` defaults to the intensity centroid.
    """
    total = grid.values.sum()
    if total == 0:
        raise InvalidArgumentError("scan has zero total intensity")
    if center is None:
        center = centroid(grid)
    distance = _check_circle(grid, center, d)
    return float(grid.values[distance > d / 2.0].sum() / total)


def region_std(
    grid: ScanGrid,
    d: float,
    center: tuple[float, float] | None = None,
    shot_noise_corrected: bool = False,
) -> float:
    """Relative standard deviation of the pixels inside the circle of diameter ``d``.

    ``center`` defaults to the centroid of the half-maximum support. With
    ``shot_noise_corrected`` the Poisson variance (equal to the mean count) is
    removed first.
    """
    if center is None:
        center = half_max_centroid(grid)
    distance = _check_circle(grid, center, d)
    inside = grid.values[distance <= d / 2.0]
    if inside.size < MIN_REGION_PIXELS:
        raise InsufficientDataError(
            f"only {inside.size} pixels inside d = {d}; need {MIN_REGION_PIXELS}"
        )
    mean = inside.mean()
    if mean == 0:
        raise InvalidArgumentError("mean response inside the region is zero")
    variance = inside.var(ddof=1)
    if shot_noise_corrected:
        variance = max(variance - mean, 0.0)
    return float(np.sqrt(variance) / mean)


def center_slope(
    grid: ScanGrid, window: float, center: tuple[float, float] | None = None
) -> float:
    """Best-fit plane gradient magnitude over a square window, in percent per metre."""
    if center is None:
        center = half_max_centroid(grid)
    xx, yy = grid.coordinates
    half = window / 2.0
    inside = (np.abs(xx - center[0]) <= half + 1e-12 * grid.x_step) & (
        np.abs(yy - center[1]) <= half + 1e-12 * grid.y_step
    )
    n_x = np.unique(xx[inside]).size
    n_y = np.unique(yy[inside]).size
    if n_x < 3 or n_y < 3:
        raise InsufficientDataError(f"window covers {n_x} x {n_y} pixels; need at least 3 x 3")
    z = grid.values[inside]
    mean = z.mean()
    if mean == 0:
        raise InvalidArgumentError("mean response inside the window is zero")
    design = np.column_stack([np.ones(z.size), xx[inside] - center[0], yy[inside] - center[1]])
    coeffs, _, rank, _ = np.linalg.lstsq(design, z, rcond=None)
    if rank < 3:
        raise InsufficientDataError("window is degenerate for a plane fit")
    return float(100.0 * np.hypot(coeffs[1], coeffs[2]) / mean)


def alignment_uncertainty(slope_percent_per_m: float, repeatability_m: float) -> float:
    """Relative response uncertainty (percent) from positioning repeatability."""
    if repeatability_m < 0:
        raise InvalidArgumentError("repeatability must be non-negative")
    return slope_percent_per_m * repeatability_m
