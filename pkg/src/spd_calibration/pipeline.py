"""End-to-end DE analysis of one calibration campaign.

Counts, monitor and reference logs plus calibration constants go in; DE
versus count rate, the rate-curve fit and DE at the target rates come out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger

from . import fileio
from .debudget import (
    BudgetComponent,
    CountObservation,
    EfficiencyResult,
    FreeSpaceVariability,
    PowerObservation,
    TrapObservation,
    corrected_counts,
    de_fiber,
    de_freespace,
    monitor_power,
    ratio_fiber,
    ratio_freespace,
    systematic_budget,
    trap_power,
    with_shares,
)
from .errors import InsufficientDataError, InvalidArgumentError
from .quantities import Uncertain, fiber_end_transmittance
from .ratecurve import (
    RateCurveFit,
    RateEstimate,
    RatePoint,
    SettingMean,
    aggregate_by_setting,
    de_at_rate,
    exclude_above,
    fit_rate_curve,
    flag_outliers,
)
from .schemas import CalibrationConstants, Scenario
from .timetag import AfterpulseModel

RATIO_RANGE = "ratio"
DUT_RANGE = "dut"
OSA_SCALE_RULE = "mean bright-minus-dark reading of the corrected meter"


@dataclass(frozen=True)
class RateEstimateBudget:
    estimate: RateEstimate
    components: list[BudgetComponent]


@dataclass
class DEAnalysis:
    scenario: Scenario
    constants: CalibrationConstants
    ratio: Uncertain
    points: list[RatePoint]
    efficiencies: list[EfficiencyResult]
    outliers: list[bool]
    fitted_points: list[RatePoint]
    fit: RateCurveFit
    estimates: list[RateEstimateBudget]
    settings: list[SettingMean] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def _osa_offset(scenario: Scenario, constants: CalibrationConstants) -> Uncertain:
    return Uncertain(scenario.delta_lambda_osa_nm, constants.u_osa_m * 1e9)


def output_to_monitor_ratio(
    scenario: Scenario,
    constants: CalibrationConstants,
    monitor: pd.DataFrame,
    reference: pd.DataFrame,
) -> Uncertain:
    """``R_out/mon`` (fiber) or ``RV`` (free space) from the ``ratio`` range readings."""
    lam = scenario.wavelength_nm
    offset = _osa_offset(scenario, constants)
    y_obs = PowerObservation(
        fileio.select_readings(monitor, RATIO_RANGE),
        fileio.select_readings(monitor, RATIO_RANGE, dark=True),
        cal_nl=constants.cal_nl_for(scenario.monitor_meter, RATIO_RANGE),
        b_lambda=constants.b_lambda_for(scenario.monitor_meter, lam),
        delta_lambda_osa=offset,
    )
    b_ref = constants.b_lambda_for(scenario.reference_meter, lam)
    if scenario.mode == "fiber":
        x_obs = PowerObservation(
            fileio.select_readings(reference, RATIO_RANGE),
            fileio.select_readings(reference, RATIO_RANGE, dark=True),
            cal_nl=constants.cal_nl_for(scenario.reference_meter, RATIO_RANGE),
            b_lambda=b_ref,
            delta_lambda_osa=offset,
            cal_abs=constants.cal_abs_value(),
        )
        quotient = monitor_power(x_obs).value / monitor_power(y_obs).value
        stab = Uncertain(0.0, constants.stab_relative * quotient)
        return ratio_fiber(x_obs, y_obs, stab)

    trap = TrapObservation(
        fileio.select_readings(reference, RATIO_RANGE),
        fileio.select_readings(reference, RATIO_RANGE, dark=True),
        v_cal=constants.v_cal.to_uncertain(),
        responsivity_cal=constants.responsivity_cal.to_uncertain(),
        gain=constants.gain.to_uncertain(),
        b_lambda=b_ref,
        delta_lambda_osa=offset,
    )
    y = monitor_power(y_obs)
    quotient = trap_power(trap).value / y.value
    stab = Uncertain(0.0, constants.stab_relative * quotient)
    return ratio_freespace(trap, y_obs, stab)


def afterpulse_model(scenario: Scenario) -> AfterpulseModel:
    ap = scenario.afterpulse
    return AfterpulseModel.from_coefficients(
        Uncertain(ap.ap0, ap.u_ap0),
        Uncertain(ap.ap, ap.u_ap),
        ap.cov,
        ap.rate_min if ap.rate_min is not None else 0.0,
        ap.rate_max if ap.rate_max is not None else math.inf,
    )


def _relative_scatter(readings: np.ndarray) -> float:
    if readings.size < 2 or readings.mean() == 0:
        return 0.0
    return float(readings.std(ddof=1) / math.sqrt(readings.size) / abs(readings.mean()))


def rate_points(
    scenario: Scenario,
    constants: CalibrationConstants,
    counts: pd.DataFrame,
    monitor: pd.DataFrame,
    ratio: Uncertain,
) -> tuple[list[RatePoint], list[EfficiencyResult]]:
    """One DE point per count record, at its detected count rate."""
    model = afterpulse_model(scenario)
    lam = scenario.wavelength_nm
    lambda_c = Uncertain(lam * 1e-9, math.hypot(scenario.u_wavelength_nm * 1e-9, constants.u_osa_m))
    eta_f = None
    if scenario.n_eff is not None:
        eta_f = fiber_end_transmittance(scenario.n_eff, constants.u_eta_f)
    variability = FreeSpaceVariability(**constants.variability.model_dump())
    dark_readings = fileio.select_readings(monitor, DUT_RANGE, dark=True)
    cal_nl = constants.cal_nl_for(scenario.monitor_meter, DUT_RANGE)
    b_mon = constants.b_lambda_for(scenario.monitor_meter, lam)
    offset = _osa_offset(scenario, constants)

    points, results = [], []
    for row in counts.itertuples(index=False):
        obs = CountObservation(
            c_bar=row.c_bar,
            c_dark=row.c_dark,
            n_intervals=row.n_gates,
            n_dark_intervals=row.n_dark_gates,
            gate_time=row.gate_s,
        )
        c = corrected_counts(obs, model).scaled(1.0 / row.gate_s)
        bright = fileio.select_readings(monitor, DUT_RANGE, t_start=row.t_start_s, t_stop=row.t_stop_s)
        pm = monitor_power(PowerObservation(bright, dark_readings, cal_nl, b_mon, offset))
        if scenario.mode == "fiber":
            result = de_fiber(c, pm, lambda_c, eta_f, ratio)
        else:
            result = de_freespace(c, pm, lambda_c, ratio, variability)
        u_stat = result.de.value * math.hypot(c.relative, _relative_scatter(bright))
        points.append(RatePoint(obs.rate, result.de, str(row.setting_id), u_stat))
        results.append(result)
        logger.debug(
            f"setting {row.setting_id} repeat {row.repeat}: {obs.rate:.4g} cnt/s, DE = {result.de}"
        )
    return points, results


def estimate_budget(
    estimate: RateEstimate,
    constants: CalibrationConstants,
    wavelength_nm: float,
    points: list[RatePoint],
) -> list[BudgetComponent]:
    """Systematic rows in summary-table order, then statistical and fit rows."""
    de = estimate.de.value
    statistical = float(np.mean([p.u_stat for p in points if p.u_stat is not None])) if points else 0.0
    rows = list(systematic_budget(constants, wavelength_nm))
    rows += [
        BudgetComponent("statistical", statistical / de),
        BudgetComponent("rate_fit", estimate.prediction_u / de),
    ]
    return with_shares(rows)


def analyze_campaign(
    scenario: Scenario,
    constants: CalibrationConstants,
    counts: pd.DataFrame,
    monitor: pd.DataFrame,
    reference: pd.DataFrame,
    far_factor: float = 10.0,
) -> DEAnalysis:
    if counts.empty:
        raise InsufficientDataError("no count records")
    ratio = output_to_monitor_ratio(scenario, constants, monitor, reference)
    logger.info(f"output-to-monitor ratio {ratio}")
    points, results = rate_points(scenario, constants, counts, monitor, ratio)

    warnings = [w for r in results for w in r.warnings]
    outliers = flag_outliers(points, scenario.outlier_k)
    if any(outliers):
        warnings.append(f"{sum(outliers)} points deviate by more than {scenario.outlier_k:g} u from the robust rate curve")
    fitted = points
    if scenario.cutoff_rate is not None:
        fitted = exclude_above(points, scenario.cutoff_rate)
    fit = fit_rate_curve(fitted, weighted=scenario.weighted)

    estimates = []
    for target in scenario.target_rates:
        estimate = de_at_rate(fit, fitted, target, far_factor)
        if estimate.far_extrapolation:
            warnings.append(f"target rate {target:g} cnt/s is a far extrapolation")
        budget = estimate_budget(estimate, constants, scenario.wavelength_nm, fitted)
        estimates.append(RateEstimateBudget(estimate, budget))
        logger.info(f"DE at {target:g} cnt/s = {estimate.de} (k=1)")

    return DEAnalysis(
        scenario=scenario,
        constants=constants,
        ratio=ratio,
        points=points,
        efficiencies=results,
        outliers=outliers,
        fitted_points=list(fitted),
        fit=fit,
        estimates=estimates,
        settings=aggregate_by_setting(points),
        warnings=warnings,
    )


@dataclass(frozen=True)
class ScenarioInputs:
    constants_path: Path
    counts_path: Path
    monitor_path: Path
    reference_path: Path

    def digests(self) -> dict[str, str]:
        return {
            path.name: fileio.file_digest(path)
            for path in sorted(
                (self.constants_path, self.counts_path, self.monitor_path, self.reference_path),
                key=lambda p: p.name,
            )
        }


def scenario_inputs(scenario: Scenario) -> ScenarioInputs:
    return ScenarioInputs(
        constants_path=fileio.resolve_constants(scenario.constants, scenario.base_dir),
        counts_path=scenario.resolve(scenario.counts),
        monitor_path=scenario.resolve(scenario.monitor),
        reference_path=scenario.resolve(scenario.reference),
    )


def analyze_scenario(scenario: Scenario, far_factor: float = 10.0) -> tuple[DEAnalysis, ScenarioInputs]:
    """Load every file a scenario names and run the analysis."""
    inputs = scenario_inputs(scenario)
    constants = fileio.load_constants(inputs.constants_path)
    if constants.mode != scenario.mode:
        raise InvalidArgumentError(
            f"scenario mode {scenario.mode!r} does not match constants mode {constants.mode!r}"
        )
    analysis = analyze_campaign(
        scenario,
        constants,
        fileio.read_counts_csv(inputs.counts_path),
        fileio.read_power_csv(inputs.monitor_path),
        fileio.read_power_csv(inputs.reference_path),
        far_factor=far_factor,
    )
    return analysis, inputs
