"""Exception hierarchy for the calibration toolkit.

Everything derives from ``ValueError`` so callers that only guard against bad
input keep working.
"""

from __future__ import annotations

from pathlib import Path


class CalibrationError(ValueError):
    """Base class for every error raised by the toolkit."""


class InvalidArgumentError(CalibrationError):
    """A precondition on an argument does not hold."""


class SaturationError(CalibrationError):
    """Count rate times dead time reached or exceeded one."""


class FitError(CalibrationError):
    """A least-squares problem is singular or rank deficient."""


class InsufficientDataError(CalibrationError):
    """Not enough points, bins or samples for the requested statistic."""


class MonteCarloError(CalibrationError):
    """Too many Monte Carlo draws produced non-finite results."""


class ParseError(CalibrationError):
    """A data file does not match its documented format."""

    def __init__(self, path: str | Path, line: int, expected: str):
        self.path = str(path)
        self.line = line
        self.expected = expected
        super().__init__(f"{self.path}:{line}: expected {expected}")
