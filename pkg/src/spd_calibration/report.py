"""JSON reports with a fixed schema.

Reports carry no timestamps; maps are emitted with sorted keys so that equal
inputs serialise to equal bytes. ``docs/report-schema.md`` describes each kind.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Sequence

from loguru import logger
from pydantic import BaseModel, Field, field_serializer

from .debudget import BudgetComponent
from .quantities import Uncertain

SCHEMA_VERSION = "1"


class Value(BaseModel):
    value: float
    u: float = Field(description="Standard uncertainty (k=1)")

    @classmethod
    def of(cls, q: Uncertain) -> "Value":
        return cls(value=q.value, u=q.u)


class BudgetRow(BaseModel):
    name: str
    relative_u_percent: float
    share: float = Field(description="Fraction of the combined variance")

    @classmethod
    def of(cls, component: BudgetComponent) -> "BudgetRow":
        return cls(name=component.name, relative_u_percent=component.relative_percent, share=component.share)


def budget_rows(components: Sequence[BudgetComponent]) -> list[BudgetRow]:
    return [BudgetRow.of(c) for c in components]


class AnalysisOptions(BaseModel):
    fit_weighting: Literal["weighted", "unweighted"] | None = None
    mean_uncertainty_rule: str | None = None
    baseline_start_s: float | None = None
    threshold_fraction: float | None = None
    covariance_policy: str = "omit"
    osa_scale_rule: str | None = None
    cutoff_rate: float | None = None
    outlier_k: float | None = None
    coverage_factor: float | None = None
    coverage_level: float | None = None


class Report(BaseModel):
    schema_version: str = SCHEMA_VERSION
    kind: str
    inputs: dict[str, str] = Field(default_factory=dict, description="File name to SHA-256 digest")
    constants_version: str | None = None
    options: AnalysisOptions = Field(default_factory=AnalysisOptions)
    warnings: list[str] = Field(default_factory=list)

    @field_serializer("inputs")
    def sort_inputs(self, inputs: dict[str, str]) -> dict[str, str]:
        return dict(sorted(inputs.items()))

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


# --- de -------------------------------------------------------------------


class FitSummary(BaseModel):
    intercept: Value
    slope: Value
    covariance: float
    n_points: int
    weighted: bool
    rate_min: float
    rate_max: float


class RateEstimateReport(BaseModel):
    target_rate: float
    de: Value
    coverage_factor: float
    interval: tuple[float, float]
    relative_expanded_percent: float
    mean_point_u: float
    prediction_u: float
    far_extrapolation: bool
    budget: list[BudgetRow]


class DEReport(Report):
    kind: Literal["de"] = "de"
    scenario: str
    mode: str
    wavelength_nm: float
    ratio: Value
    n_points: int
    n_fitted: int
    outlier_settings: list[str]
    fit: FitSummary
    estimates: list[RateEstimateReport]


# --- budget ---------------------------------------------------------------


class BudgetReport(Report):
    kind: Literal["budget"] = "budget"
    mode: str
    wavelength_nm: float
    rows: list[BudgetRow]
    combined_relative_percent: float
    monte_carlo_relative_percent: float | None = None
    monte_carlo_draws: int | None = None


# --- consensus ------------------------------------------------------------


class ConsensusReport(Report):
    kind: Literal["consensus"] = "consensus"
    n_runs: int
    mean: float
    level: float
    interval: tuple[float, float]
    relative_expanded_percent: float
    runs: list[Value]


# --- afterpulse -----------------------------------------------------------


class StreamSummary(BaseModel):
    file: str
    n_events: int
    rate: float
    dead_time_s: Value | None
    probability: Value
    excess_to_baseline: float
    n_baseline_bins: int


class BandPoint(BaseModel):
    rate: float
    probability: float
    lo: float
    hi: float


class AfterpulseReport(Report):
    kind: Literal["afterpulse"] = "afterpulse"
    bin_width_s: float
    window_s: float
    streams: list[StreamSummary]
    ap0: Value | None = None
    ap: Value | None = None
    covariance: float | None = None
    rate_range: tuple[float, float] | None = None
    band: list[BandPoint] = Field(default_factory=list)


# --- allan ----------------------------------------------------------------


class AllanRow(BaseModel):
    tau_s: float
    raw_percent: float
    ratio_percent: float | None = None


class AllanReport(Report):
    kind: Literal["allan"] = "allan"
    overlapping: bool
    sample_interval_s: float
    n_samples: int
    rows: list[AllanRow]


# --- beamscan -------------------------------------------------------------


class DiameterRow(BaseModel):
    diameter_m: float
    fraction_outside: float | None = None
    region_std_percent: float | None = None


class BeamscanReport(Report):
    kind: Literal["beamscan"] = "beamscan"
    scan_kind: Literal["beam", "detector"]
    shape: tuple[int, int]
    center_m: tuple[float, float]
    rows: list[DiameterRow]
    center_slope_percent_per_m: float | None = None
    alignment_u_percent: float | None = None


# --- simulate -------------------------------------------------------------


class SimulateReport(Report):
    kind: Literal["simulate"] = "simulate"
    scenario_kind: str
    seed: int
    prng: str
    outputs: dict[str, str] = Field(description="Written file name to SHA-256 digest")
    truth: dict[str, float] = Field(default_factory=dict)

    @field_serializer("outputs", "truth")
    def sort_maps(self, value: dict) -> dict:
        return dict(sorted(value.items()))


def write_report(report: Report, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json() + "\n", encoding="utf-8")
    logger.info(f"wrote {report.kind} report to {path}")
    return path
