"""Consensus of repeated run results by equal-weight linear opinion pooling.

The pooled distribution is the mixture of the per-run Gaussians N(de_i, u_i^2).
The pooling helpers also take bare ``Uncertain`` components, which carry no
DE range check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from .errors import CalibrationError, InsufficientDataError, InvalidArgumentError
from .quantities import Uncertain

DEFAULT_XTOL = 1e-9


@dataclass(frozen=True)
class RunResult:
    de: Uncertain
    label: str = ""
    wavelength: Uncertain | None = None
    r_out_mon: Uncertain | None = None
    temperature: Uncertain | None = None

    def __post_init__(self):
        if not 0 < self.de.value < 1.5:
            raise InvalidArgumentError(f"run {self.label!r}: DE {self.de.value} is outside (0, 1.5)")
        if not self.de.u > 0:
            raise InvalidArgumentError(f"run {self.label!r}: DE uncertainty must be positive")


@dataclass(frozen=True)
class ConsensusResult:
    mean: float
    lo: float
    hi: float
    level: float
    relative_expanded: float
    n_runs: int


Component = RunResult | Uncertain


def _check_runs(runs: Sequence[Component]) -> None:
    if len(runs) < 2:
        raise InsufficientDataError(f"pooling needs at least 2 runs, got {len(runs)}")


def _components(runs: Sequence[Component]) -> tuple[np.ndarray, np.ndarray]:
    values = [r.de if isinstance(r, RunResult) else r for r in runs]
    means = np.array([v.value for v in values], dtype=float)
    sigmas = np.array([v.u for v in values], dtype=float)
    if not np.all(sigmas > 0):
        raise InvalidArgumentError("mixture components need positive uncertainties")
    return means, sigmas


def pool_mean(runs: Sequence[Component]) -> float:
    _check_runs(runs)
    means, _ = _components(runs)
    return float(np.mean(means))


def mixture_cdf(x: float, runs: Sequence[Component]) -> float:
    means, sigmas = _components(runs)
    return float(np.mean(stats.norm.cdf(x, loc=means, scale=sigmas)))


def _mixture_quantile(q: float, runs: Sequence[Component], xtol: float) -> float:
    means, sigmas = _components(runs)
    # every component quantile brackets the mixture quantile
    z = stats.norm.ppf(q)
    lo = float(np.min(means + z * sigmas)) - xtol
    hi = float(np.max(means + z * sigmas)) + xtol
    try:
        root, info = optimize.brentq(
            lambda x: mixture_cdf(x, runs) - q, lo, hi, xtol=xtol, full_output=True
        )
    except ValueError as exc:
        raise CalibrationError(f"mixture quantile {q} did not bracket: {exc}") from exc
    if not info.converged:
        raise CalibrationError(f"mixture quantile {q} did not converge: {info.flag}")
    return float(root)


def coverage_interval(
    runs: Sequence[Component], level: float = 0.95, xtol: float = DEFAULT_XTOL
) -> tuple[float, float]:
    """Probabilistically symmetric interval of the pooled mixture distribution."""
    _check_runs(runs)
    if not 0 < level < 1:
        raise InvalidArgumentError(f"coverage level must be in (0, 1), got {level}")
    tail = (1.0 - level) / 2.0
    return _mixture_quantile(tail, runs, xtol), _mixture_quantile(1.0 - tail, runs, xtol)


def relative_expanded(runs: Sequence[Component], interval: tuple[float, float]) -> float:
    """Half-width of ``interval`` as a percentage of the pooled mean."""
    mean = pool_mean(runs)
    if mean == 0:
        raise InvalidArgumentError("pooled mean is zero")
    lo, hi = interval
    return 100.0 * (hi - lo) / 2.0 / abs(mean)


def consensus(
    runs: Sequence[Component], level: float = 0.95, xtol: float = DEFAULT_XTOL
) -> ConsensusResult:
    interval = coverage_interval(runs, level, xtol)
    return ConsensusResult(
        mean=pool_mean(runs),
        lo=interval[0],
        hi=interval[1],
        level=level,
        relative_expanded=relative_expanded(runs, interval),
        n_runs=len(runs),
    )
