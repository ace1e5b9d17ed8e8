from __future__ import annotations

from pathlib import Path
from typing import Literal

from pydantic import BaseModel, Field, field_validator, model_validator

from .config import load_ratecurve_config
from .errors import InvalidArgumentError
from .quantities import Uncertain


def _ratecurve_default(key: str):
    """Default factory reading the [ratecurve] settings at model creation."""
    return lambda: load_ratecurve_config()[key]


def _default_target_rates() -> list[float]:
    return [float(r) for r in load_ratecurve_config()["target_rates"]]


class UncertainSpec(BaseModel):
    """A value with its k=1 standard uncertainty as written in data files."""

    value: float
    u: float = Field(default=0.0, ge=0, description="Standard uncertainty (k=1), same unit as value")

    def to_uncertain(self) -> Uncertain:
        return Uncertain(self.value, self.u)


class BLambdaEntry(UncertainSpec):
    meter: str = Field(description="Meter name, e.g. 'pm_mon', 'pm' or 'sitrap'")
    wavelength_nm: float = Field(gt=0)


class CalNlEntry(UncertainSpec):
    meter: str
    range: str = Field(description="Range identifier used in power CSVs, e.g. 'dut' or 'ratio'")


class VariabilitySpec(BaseModel):
    """Relative standard uncertainties (fractions) of the free-space variability terms."""

    reflect: float = Field(default=0.0, ge=0)
    collect: float = Field(default=0.0, ge=0)
    align: float = Field(default=0.0, ge=0)


class CalibrationConstants(BaseModel):
    """Calibration constants of one measurement configuration.

    All uncertainties are k=1. Relative quantities are fractions, not percent.
    """

    version: str
    mode: Literal["fiber", "free-space"]
    description: str = ""
    b_lambda: list[BLambdaEntry] = Field(default_factory=list)
    cal_nl: list[CalNlEntry] = Field(default_factory=list)
    cal_abs: UncertainSpec | None = None
    responsivity_cal: UncertainSpec | None = Field(default=None, description="SiTrap responsivity in A/W")
    gain: UncertainSpec | None = Field(default=None, description="Transimpedance gain in V/A")
    v_cal: UncertainSpec | None = Field(default=None, description="Voltmeter correction factor")
    stab_relative: float = Field(default=0.0, ge=0, description="u(R_stab)/R")
    u_osa_m: float = Field(default=1e-10, ge=0)
    u_eta_f: float = Field(default=1e-3, ge=0)
    variability: VariabilitySpec = Field(default_factory=VariabilitySpec)

    @model_validator(mode="after")
    def check_mode_fields(self) -> "CalibrationConstants":
        if self.mode == "free-space":
            missing = [
                name for name in ("responsivity_cal", "gain", "v_cal") if getattr(self, name) is None
            ]
            if missing:
                raise ValueError(f"free-space constants need {', '.join(missing)}")
        return self

    def b_lambda_for(self, meter: str, wavelength_nm: float, tolerance_nm: float = 2.0) -> Uncertain:
        for entry in self.b_lambda:
            if entry.meter == meter and abs(entry.wavelength_nm - wavelength_nm) <= tolerance_nm:
                return entry.to_uncertain()
        return Uncertain(0.0, 0.0)

    def cal_nl_for(self, meter: str, range_id: str) -> Uncertain:
        for entry in self.cal_nl:
            if entry.meter == meter and entry.range == range_id:
                return entry.to_uncertain()
        raise InvalidArgumentError(f"no nonlinearity correction for meter {meter!r} range {range_id!r}")

    def cal_abs_value(self) -> Uncertain:
        return self.cal_abs.to_uncertain() if self.cal_abs else Uncertain(1.0, 0.0)


class DetectorConfig(BaseModel):
    dead_time: float = Field(default=0.0, ge=0, description="Non-paralyzable dead time in s")
    afterpulse_prob: float = Field(default=0.0, ge=0, lt=1, description="Rate-independent afterpulse probability ap0")
    afterpulse_slope: float = Field(default=0.0, description="Rate coefficient ap in (cnt/s)^-1")
    afterpulse_tau: float = Field(default=20e-9, gt=0, description="Exponential afterpulse delay constant in s")
    dark_rate: float = Field(default=0.0, ge=0, description="Dark count rate in cnt/s")
    de_true: float = Field(default=1.0, ge=0, le=1)
    cascade_afterpulses: bool = Field(
        default=True, description="Afterpulses may themselves trigger afterpulses"
    )

    def afterpulse_at(self, rate: float) -> float:
        return self.afterpulse_prob + self.afterpulse_slope * rate


class SourceConfig(BaseModel):
    mode: Literal["cw", "pulsed"] = "cw"
    rate: float = Field(gt=0, description="Mean photon rate (cw) or pulse repetition rate (pulsed), 1/s")
    mu_p: float | None = Field(default=None, ge=0, description="Mean photons per pulse")

    @model_validator(mode="after")
    def check_pulsed(self) -> "SourceConfig":
        if self.mode == "pulsed" and self.mu_p is None:
            raise ValueError("pulsed sources need mu_p")
        return self


class PowerMeterSimConfig(BaseModel):
    name: str = Field(default="pm", description="Channel name; also the output file stem")
    mean: float = Field(description="Mean reading in W")
    white_sigma: float = Field(default=0.0, ge=0, description="Relative white noise per sample")
    drift: float = Field(default=0.0, ge=0, description="Relative random-walk step per sample")
    common_mode_id: str | None = Field(default=None, description="Channels with equal ids share drift")


class AfterpulseConstants(BaseModel):
    ap0: float = 0.0
    u_ap0: float = Field(default=0.0, ge=0)
    ap: float = 0.0
    u_ap: float = Field(default=0.0, ge=0)
    cov: float = 0.0
    rate_min: float | None = None
    rate_max: float | None = None


class BistableDark(BaseModel):
    extra_rate: float = Field(gt=0, description="Additional dark rate while in the high state, cnt/s")
    switch_time_s: float = Field(ge=0, description="Campaign time at which the high state starts")


class CampaignScenario(BaseModel):
    """True apparatus state for a simulated calibration campaign."""

    kind: Literal["campaign"] = "campaign"

    name: str = "campaign"
    mode: Literal["fiber", "free-space"] = "fiber"
    constants: str = Field(description="Calibration-constants TOML, relative to the scenario file")
    detector: DetectorConfig
    afterpulse_u: AfterpulseConstants = Field(
        default_factory=AfterpulseConstants,
        description="Uncertainty of the afterpulse characterization handed to the analysis",
    )
    wavelength_nm: float = Field(gt=0)
    u_wavelength_nm: float = Field(default=0.0, ge=0)
    n_eff: float | None = Field(default=None, ge=1)
    r_out_mon: float = Field(gt=0, description="True output-to-monitor power ratio")
    photon_rates: list[float] = Field(description="Delivered photon rates per attenuator setting, 1/s")
    repeats: int = Field(default=1, ge=1)
    gate_s: float = Field(default=1.0, gt=0)
    n_gates: int = Field(default=25, ge=2)
    n_dark_gates: int = Field(default=25, ge=1)
    monitor_noise: float = Field(default=1e-3, ge=0, description="Relative white noise of monitor readings")
    monitor_dark_w: float = Field(default=0.0, ge=0)
    reference_noise: float = Field(default=1e-3, ge=0)
    reference_dark: float = Field(default=0.0, ge=0)
    n_ratio_samples: int = Field(default=100, ge=2)
    ratio_monitor_power_w: float = Field(default=1e-6, gt=0)
    bistable_dark: BistableDark | None = None
    noiseless: bool = False
    target_rates: list[float] = Field(default_factory=_default_target_rates)

    @field_validator("photon_rates")
    @classmethod
    def check_rates(cls, value: list[float]) -> list[float]:
        if len(value) < 2 or any(r <= 0 for r in value):
            raise ValueError("need at least two positive photon rates")
        return value


class Scenario(BaseModel):
    """Analysis scenario: where the campaign files are and which options apply."""

    name: str = "campaign"
    mode: Literal["fiber", "free-space"] = "fiber"
    constants: str
    counts: str
    monitor: str
    reference: str
    wavelength_nm: float = Field(gt=0)
    u_wavelength_nm: float = Field(default=0.0, ge=0)
    delta_lambda_osa_nm: float = 0.0
    n_eff: float | None = Field(default=None, ge=1, description="Omit when the DUT has no fiber junction")
    monitor_meter: str = "pm_mon"
    reference_meter: str | None = None
    afterpulse: AfterpulseConstants = Field(default_factory=AfterpulseConstants)
    target_rates: list[float] = Field(default_factory=_default_target_rates)
    weighted: bool = Field(default_factory=_ratecurve_default("weighted"), validate_default=True)
    cutoff_rate: float | None = Field(default=None, gt=0)
    outlier_k: float = Field(default_factory=_ratecurve_default("outlier_k"), gt=0, validate_default=True)
    base_dir: Path = Field(default=Path("."), exclude=True)

    @model_validator(mode="after")
    def default_reference_meter(self) -> "Scenario":
        if self.reference_meter is None:
            self.reference_meter = "pm" if self.mode == "fiber" else "sitrap"
        return self

    def resolve(self, relative: str) -> Path:
        path = Path(relative)
        return path if path.is_absolute() else self.base_dir / path


class TimetagScenario(BaseModel):
    """A single detector exposed to one source, written as a time-tag file."""

    kind: Literal["timetag"] = "timetag"
    name: str = "stream"
    source: SourceConfig
    detector: DetectorConfig
    duration_s: float = Field(gt=0)
    resolution_ps: float = Field(default=156.25, gt=0)


class PowerScenario(BaseModel):
    """Power-meter channels read at a fixed interval, one CSV per channel."""

    kind: Literal["power"] = "power"
    name: str = "power"
    meters: list[PowerMeterSimConfig] = Field(min_length=1)
    n_samples: int = Field(ge=2)
    sample_interval_s: float = Field(default=1.0, gt=0)

    @field_validator("meters")
    @classmethod
    def unique_names(cls, value: list[PowerMeterSimConfig]) -> list[PowerMeterSimConfig]:
        names = [m.name for m in value]
        if len(set(names)) != len(names):
            raise ValueError(f"meter names must be unique, got {names}")
        return value
