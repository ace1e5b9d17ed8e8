"""Command-line interface: ``spd-calibration <subcommand> ...``.

Reports go to stdout (or ``--out``) as JSON; logs go to stderr.
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd
from loguru import logger

from . import fileio
from .allan import octave_taus, ratio_series, relative_allan
from .beamscan import (
    alignment_uncertainty,
    center_slope,
    centroid,
    fraction_outside_diameter,
    half_max_centroid,
    region_std,
)
from .config import (
    load_afterpulse_config,
    load_consensus_config,
    load_monte_carlo_config,
    load_ratecurve_config,
    load_report_config,
)
from .consensus import consensus
from .debudget import systematic_budget, systematic_monte_carlo
from .errors import CalibrationError
from .pipeline import OSA_SCALE_RULE, analyze_scenario
from .quantities import quadrature
from .ratecurve import MEAN_UNCERTAINTY_RULE
from .report import (
    AfterpulseReport,
    AllanReport,
    AllanRow,
    AnalysisOptions,
    BandPoint,
    BeamscanReport,
    BudgetReport,
    ConsensusReport,
    DEReport,
    DiameterRow,
    FitSummary,
    RateEstimateReport,
    Report,
    SimulateReport,
    StreamSummary,
    Value,
    budget_rows,
    write_report,
)
from .schemas import CampaignScenario, TimetagScenario
from .simulator import (
    PRNG_ALGORITHM,
    simulate_campaign,
    simulate_detections,
    simulate_power_series,
)
from .timetag import (
    afterpulse_probability,
    estimate_dead_time,
    fit_afterpulse_model,
    interarrival_sum_histogram,
)


class CalibrationFailure(click.ClickException):
    """A core-module error, reported as one line with exit status 2."""

    exit_code = 2


def reports_errors(command):
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except CalibrationError as exc:
            logger.debug(f"{type(exc).__name__}: {exc}")
            raise CalibrationFailure(str(exc)) from exc

    return wrapper


def emit(report: Report, out: str | None) -> None:
    if out:
        write_report(report, out)
    else:
        click.echo(report.to_json())


out_option = click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write the report here instead of stdout.")


@click.group(help="Detection-efficiency calibration of single-photon detectors.")
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default="WARNING",
    show_default=True,
)
def main(log_level: str) -> None:
    logger.remove()
    logger.add(sys.stderr, level=log_level.upper())


# --- afterpulse -----------------------------------------------------------


@main.command(help="Dead time and afterpulse probability from time-tag files; fits the rate model for 3+ files.")
@click.argument("streams", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--bin-width", type=float, default=None, help="Histogram bin width in s (default: tick resolution).")
@click.option("--window", type=float, default=None, help="Histogram window in s.")
@click.option("--baseline-start", type=float, default=None, help="Start of the uncorrelated baseline in s.")
@click.option("--threshold", type=float, default=None, help="Dead-time threshold as a fraction of the baseline.")
@click.option("--at", "rates", type=float, multiple=True, help="Count rates at which to report the model band.")
@click.option("--plot-dir", type=click.Path(file_okay=False), default=None, help="Write histogram CSVs here.")
@out_option
@reports_errors
def afterpulse(streams, bin_width, window, baseline_start, threshold, rates, plot_dir, out):
    cfg = load_afterpulse_config()
    window = window if window is not None else cfg["window_s"]
    baseline_start = baseline_start if baseline_start is not None else cfg["baseline_start_s"]
    threshold = threshold if threshold is not None else cfg["threshold_fraction"]

    summaries, points, inputs = [], [], {}
    hist = None
    for path in map(Path, streams):
        stream = fileio.read_timetag(path)
        inputs[path.name] = fileio.file_digest(path)
        hist = interarrival_sum_histogram(stream, bin_width, window)
        dead = estimate_dead_time(hist, threshold, baseline_start)
        estimate = afterpulse_probability(hist, baseline_start, dead, cfg["min_baseline_bins"])
        summaries.append(
            StreamSummary(
                file=path.name,
                n_events=stream.n_events,
                rate=stream.rate,
                dead_time_s=Value.of(dead.dead_time) if dead.detected else None,
                probability=Value.of(estimate.probability),
                excess_to_baseline=estimate.excess_to_baseline,
                n_baseline_bins=estimate.n_baseline_bins,
            )
        )
        points.append((stream.rate, estimate.probability))
        if plot_dir:
            fileio.write_histogram(hist, Path(plot_dir) / f"{path.stem}_histogram.csv")

    report = AfterpulseReport(
        inputs=inputs,
        options=AnalysisOptions(baseline_start_s=baseline_start, threshold_fraction=threshold),
        bin_width_s=hist.bin_width,
        window_s=hist.window,
        streams=summaries,
    )
    if len(points) >= 3:
        model = fit_afterpulse_model(points)
        level = cfg["confidence_level"]
        band = []
        for rate in rates:
            lo, hi = model.band(rate, level)
            band.append(BandPoint(rate=rate, probability=model.probability(rate).value, lo=float(lo), hi=float(hi)))
        report = report.model_copy(
            update={
                "ap0": Value.of(model.ap0),
                "ap": Value.of(model.ap),
                "covariance": model.cov_ap0_ap,
                "rate_range": (model.rate_min, model.rate_max),
                "band": band,
                "warnings": list(model.warnings),
            }
        )
    elif rates:
        logger.warning("the rate model needs at least 3 streams; --at is ignored")
    emit(report, out)


# --- allan ----------------------------------------------------------------


@main.command(help="Relative Allan deviation of power readings, optionally of their ratio to a second meter.")
@click.argument("csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--ratio-to", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--range-id", default=None, help="Only use readings of this range.")
@click.option("--tau", "taus", type=float, multiple=True, help="Averaging times in s (default: octaves).")
@click.option("--non-overlapping", is_flag=True, default=False)
@click.option("--plot-dir", type=click.Path(file_okay=False), default=None)
@out_option
@reports_errors
def allan(csv, ratio_to, range_id, taus, non_overlapping, plot_dir, out):
    overlapping = not non_overlapping
    series = fileio.power_series(fileio.read_power_csv(csv), range_id)
    inputs = {Path(csv).name: fileio.file_digest(csv)}
    taus = list(taus) or octave_taus(series, overlapping)
    raw = relative_allan(series, taus, overlapping)
    ratio = None
    if ratio_to:
        other = fileio.power_series(fileio.read_power_csv(ratio_to), range_id)
        inputs[Path(ratio_to).name] = fileio.file_digest(ratio_to)
        ratio = relative_allan(ratio_series(series, other), taus, overlapping)
    rows = [
        AllanRow(tau_s=tau, raw_percent=pct, ratio_percent=ratio[i][1] if ratio else None)
        for i, (tau, pct) in enumerate(raw)
    ]
    if plot_dir:
        frame = pd.DataFrame([r.model_dump(exclude_none=True) for r in rows])
        fileio.write_table(frame, Path(plot_dir) / "allan.csv")
    emit(
        AllanReport(
            inputs=inputs,
            overlapping=overlapping,
            sample_interval_s=series.sample_interval,
            n_samples=len(series),
            rows=rows,
        ),
        out,
    )


# --- de -------------------------------------------------------------------


@main.command(help="DE versus count rate and DE at the target rates for one campaign.")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--at", "rates", type=float, multiple=True, help="Target count rates in cnt/s.")
@click.option("--cutoff", type=float, default=None, help="Exclude points above this count rate from the fit.")
@click.option("--weighted/--unweighted", default=None, help="Rate-curve fit weighting.")
@click.option("--plot-dir", type=click.Path(file_okay=False), default=None)
@out_option
@reports_errors
def de(scenario_path, rates, cutoff, weighted, plot_dir, out):
    rc = load_ratecurve_config()
    k = load_report_config()["coverage_factor"]
    scenario = fileio.load_scenario(scenario_path)
    updates = {}
    if rates:
        updates["target_rates"] = list(rates)
    if cutoff is not None:
        updates["cutoff_rate"] = cutoff
    if weighted is not None:
        updates["weighted"] = weighted
    if updates:
        scenario = scenario.model_copy(update=updates)
    analysis, files = analyze_scenario(scenario, rc["far_extrapolation_factor"])

    estimates = []
    for item in analysis.estimates:
        est = item.estimate
        interval = est.expanded(k)
        estimates.append(
            RateEstimateReport(
                target_rate=est.target_rate,
                de=Value.of(est.de),
                coverage_factor=k,
                interval=(interval.lo, interval.hi),
                relative_expanded_percent=interval.relative_percent,
                mean_point_u=est.mean_point_u,
                prediction_u=est.prediction_u,
                far_extrapolation=est.far_extrapolation,
                budget=budget_rows(item.components),
            )
        )
    fit = analysis.fit
    outlier_settings = sorted({p.setting_id for p, flag in zip(analysis.points, analysis.outliers) if flag})
    inputs = files.digests()
    inputs[Path(scenario_path).name] = fileio.file_digest(scenario_path)
    report = DEReport(
        inputs=inputs,
        constants_version=analysis.constants.version,
        options=AnalysisOptions(
            fit_weighting="weighted" if scenario.weighted else "unweighted",
            mean_uncertainty_rule=MEAN_UNCERTAINTY_RULE,
            covariance_policy=load_report_config()["covariance_policy"],
            osa_scale_rule=OSA_SCALE_RULE,
            cutoff_rate=scenario.cutoff_rate,
            outlier_k=scenario.outlier_k,
            coverage_factor=k,
        ),
        warnings=analysis.warnings,
        scenario=scenario.name,
        mode=scenario.mode,
        wavelength_nm=scenario.wavelength_nm,
        ratio=Value.of(analysis.ratio),
        n_points=len(analysis.points),
        n_fitted=len(analysis.fitted_points),
        outlier_settings=outlier_settings,
        fit=FitSummary(
            intercept=Value.of(fit.intercept),
            slope=Value.of(fit.slope),
            covariance=fit.cov,
            n_points=fit.n_points,
            weighted=fit.weighted,
            rate_min=fit.rate_min,
            rate_max=fit.rate_max,
        ),
        estimates=estimates,
    )
    if plot_dir:
        plot_dir = Path(plot_dir)
        fileio.write_rate_points(analysis.points, plot_dir / "points.csv")
        settings = pd.DataFrame(
            [(s.setting_id, s.rate, s.de, s.n_points) for s in analysis.settings],
            columns=["setting_id", "rate_cps", "de", "n_points"],
        )
        fileio.write_table(settings, plot_dir / "settings.csv")
    emit(report, out)


# --- budget ---------------------------------------------------------------


@main.command(help="Systematic uncertainty budget in summary-table order.")
@click.option("--constants", "constants_ref", required=True, help="Constants TOML path or shipped name.")
@click.option("--wavelength", type=float, required=True, help="Measurement wavelength in nm.")
@click.option("--monte-carlo/--no-monte-carlo", default=False, help="Cross-check by sampling.")
@click.option("--draws", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@out_option
@reports_errors
def budget(constants_ref, wavelength, monte_carlo, draws, seed, out):
    path = fileio.resolve_constants(constants_ref, Path.cwd())
    constants = fileio.load_constants(path)
    rows = systematic_budget(constants, wavelength)
    combined = quadrature(*(r.relative_u for r in rows))
    report = BudgetReport(
        inputs={path.name: fileio.file_digest(path)},
        constants_version=constants.version,
        mode=constants.mode,
        wavelength_nm=wavelength,
        rows=budget_rows(rows),
        combined_relative_percent=100.0 * combined,
    )
    if monte_carlo:
        mc_cfg = load_monte_carlo_config()
        n_draws = draws or mc_cfg["n_draws"]
        rel = systematic_monte_carlo(constants, wavelength, n_draws=n_draws, seed=seed)
        report = report.model_copy(
            update={"monte_carlo_relative_percent": 100.0 * rel, "monte_carlo_draws": n_draws}
        )
    emit(report, out)


# --- consensus ------------------------------------------------------------


@main.command(name="consensus", help="Equal-weight linear opinion pool of repeated run results.")
@click.option("--runs", "runs_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--level", type=float, default=None, help="Coverage probability of the interval.")
@out_option
@reports_errors
def consensus_command(runs_path, level, out):
    cfg = load_consensus_config()
    level = level if level is not None else cfg["level"]
    runs = fileio.read_runs(runs_path)
    result = consensus(runs, level, cfg["xtol"])
    emit(
        ConsensusReport(
            inputs={Path(runs_path).name: fileio.file_digest(runs_path)},
            options=AnalysisOptions(coverage_level=level),
            n_runs=result.n_runs,
            mean=result.mean,
            level=result.level,
            interval=(result.lo, result.hi),
            relative_expanded_percent=result.relative_expanded,
            runs=[Value.of(r.de) for r in runs],
        ),
        out,
    )


# --- beamscan -------------------------------------------------------------


@main.command(help="Beam-profile or detector-uniformity statistics of a 2-D scan.")
@click.argument("scan", type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", "scan_kind", type=click.Choice(["beam", "detector"]), default="beam", show_default=True)
@click.option("--diameter", "diameters", type=float, multiple=True, required=True, help="Circle diameters in um.")
@click.option("--window", type=float, default=None, help="Plane-fit window edge in um (detector scans).")
@click.option("--repeatability", type=float, default=None, help="Positioning repeatability in um.")
@click.option("--shot-noise-corrected", is_flag=True, default=False)
@out_option
@reports_errors
def beamscan(scan, scan_kind, diameters, window, repeatability, shot_noise_corrected, out):
    grid = fileio.read_scan(scan)
    rows = []
    if scan_kind == "beam":
        center = centroid(grid)
        for d in diameters:
            rows.append(DiameterRow(diameter_m=d * 1e-6, fraction_outside=fraction_outside_diameter(grid, d * 1e-6, center)))
    else:
        center = half_max_centroid(grid)
        for d in diameters:
            std = region_std(grid, d * 1e-6, center, shot_noise_corrected)
            rows.append(DiameterRow(diameter_m=d * 1e-6, region_std_percent=100.0 * std))
    slope = alignment = None
    if window is not None:
        slope = center_slope(grid, window * 1e-6, center)
        if repeatability is not None:
            alignment = alignment_uncertainty(slope, repeatability * 1e-6)
    emit(
        BeamscanReport(
            inputs={Path(scan).name: fileio.file_digest(scan)},
            scan_kind=scan_kind,
            shape=grid.values.shape,
            center_m=center,
            rows=rows,
            center_slope_percent_per_m=slope,
            alignment_u_percent=alignment,
        ),
        out,
    )


# --- simulate -------------------------------------------------------------


def _simulate_campaign(scenario: CampaignScenario, base_dir: Path, seed: int, out_dir: Path) -> tuple[dict, dict]:
    constants_path = fileio.resolve_constants(scenario.constants, base_dir)
    constants = fileio.load_constants(constants_path)
    campaign = simulate_campaign(scenario, constants, seed)
    written = fileio.write_campaign(campaign, constants_path, out_dir)
    truth = dict(campaign.truth.draws)
    truth["de_true"] = campaign.truth.de_true
    truth["dead_time"] = campaign.truth.dead_time
    for target in scenario.target_rates:
        truth[f"de_at_{target:g}"] = campaign.truth.de_at(target)
    return {p.name: fileio.file_digest(p) for p in written}, truth


@main.command(help="Write synthetic campaign, time-tag or power files from a scenario.")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@reports_errors
def simulate(scenario_path, seed, out_dir):
    scenario = fileio.load_simulation_scenario(scenario_path)
    out_dir = Path(out_dir)
    base_dir = Path(scenario_path).parent
    truth: dict[str, float] = {}
    if isinstance(scenario, CampaignScenario):
        outputs, truth = _simulate_campaign(scenario, base_dir, seed, out_dir)
    elif isinstance(scenario, TimetagScenario):
        stream = simulate_detections(
            scenario.source, scenario.detector, scenario.duration_s, seed, scenario.resolution_ps * 1e-12
        )
        path = fileio.write_timetag(stream, out_dir / f"{scenario.name}.txt")
        outputs = {path.name: fileio.file_digest(path)}
        truth = {"detected_rate": stream.rate, "n_events": float(stream.n_events)}
    else:
        series = simulate_power_series(scenario.meters, scenario.n_samples, scenario.sample_interval_s, seed)
        outputs = {}
        for meter, values in zip(scenario.meters, series):
            path = fileio.write_series(values, out_dir / f"{meter.name}.csv")
            outputs[path.name] = fileio.file_digest(path)
            truth[f"{meter.name}_mean"] = float(np.mean(values.values))
    report = SimulateReport(
        inputs={Path(scenario_path).name: fileio.file_digest(scenario_path)},
        scenario_kind=scenario.kind,
        seed=seed,
        prng=PRNG_ALGORITHM,
        outputs=outputs,
        truth=truth,
    )
    emit(report, str(out_dir / "simulate.json"))
    click.echo(report.to_json())
