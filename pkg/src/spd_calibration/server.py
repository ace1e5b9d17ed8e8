from pathlib import Path
from typing import Annotated

from loguru import logger
from mcp.server.fastmcp import FastMCP
from pydantic import Field

from . import fileio
from .allan import octave_taus, relative_allan
from .config import (
    load_afterpulse_config,
    load_consensus_config,
    load_ratecurve_config,
    load_report_config,
)
from .consensus import RunResult, consensus
from .errors import CalibrationError
from .pipeline import analyze_scenario
from .quantities import Uncertain, fiber_end_transmittance, photon_flux
from .simulator import simulate_campaign, simulate_detections, simulate_power_series
from .schemas import CampaignScenario, TimetagScenario
from .timetag import afterpulse_probability, estimate_dead_time, interarrival_sum_histogram

mcp = FastMCP("mcp-spd-calibration")


def _failed(tool: str, exc: CalibrationError) -> dict:
    logger.error(f"{tool} failed: {exc}")
    return {"error": str(exc), "error_type": type(exc).__name__}


@mcp.tool(
    name="photon_flux_tool",
    description="Convert optical power in watts at a wavelength in nm to a photon rate in photons/s.",
)
def photon_flux_tool(
    power_w: Annotated[float, Field(description="Optical power in W")],
    wavelength_nm: Annotated[float, Field(description="Vacuum wavelength in nm")],
) -> dict:
    try:
        return {"photon_rate": photon_flux(power_w, wavelength_nm * 1e-9)}
    except CalibrationError as exc:
        return _failed("photon_flux_tool", exc)


@mcp.tool(
    name="fiber_transmittance_tool",
    description="Fresnel transmittance of an uncoated fiber end for an effective index, with its standard uncertainty.",
)
def fiber_transmittance_tool(
    n_eff: Annotated[float, Field(description="Effective refractive index of the fiber mode, >= 1")],
    u: Annotated[float, Field(description="Standard uncertainty to attach")] = 1e-3,
) -> dict:
    try:
        eta = fiber_end_transmittance(n_eff, u)
    except CalibrationError as exc:
        return _failed("fiber_transmittance_tool", exc)
    return {"eta_f": eta.value, "u": eta.u}


@mcp.tool(
    name="consensus_tool",
    description=(
        "Pool repeated DE run results with equal weights. Returns the mean, the probabilistically "
        "symmetric coverage interval and the relative expanded uncertainty in percent."
    ),
)
def consensus_tool(
    runs: Annotated[
        list[str],
        Field(description="Run results in concise notation, e.g. ['0.9235(30)', '0.9250(30)']"),
    ],
    level: Annotated[float | None, Field(description="Coverage probability, default 0.95")] = None,
) -> dict:
    cfg = load_consensus_config()
    try:
        results = [RunResult(Uncertain.parse(text), label=str(i + 1)) for i, text in enumerate(runs)]
        pooled = consensus(results, level if level is not None else cfg["level"], cfg["xtol"])
    except CalibrationError as exc:
        return _failed("consensus_tool", exc)
    return {
        "mean": pooled.mean,
        "interval": [pooled.lo, pooled.hi],
        "level": pooled.level,
        "relative_expanded_percent": pooled.relative_expanded,
        "n_runs": pooled.n_runs,
    }


@mcp.tool(
    name="afterpulse_tool",
    description="Dead time and afterpulse probability of one time-tag file from its interarrival-sum histogram.",
)
def afterpulse_tool(
    timetag_path: Annotated[str, Field(description="Path of a time-tag file")],
    bin_width_s: Annotated[float | None, Field(description="Histogram bin width in s")] = None,
    baseline_start_s: Annotated[float | None, Field(description="Start of the baseline in s")] = None,
) -> dict:
    cfg = load_afterpulse_config()
    baseline = baseline_start_s if baseline_start_s is not None else cfg["baseline_start_s"]
    try:
        stream = fileio.read_timetag(timetag_path)
        hist = interarrival_sum_histogram(stream, bin_width_s, cfg["window_s"])
        dead = estimate_dead_time(hist, cfg["threshold_fraction"], baseline)
        estimate = afterpulse_probability(hist, baseline, dead, cfg["min_baseline_bins"])
    except CalibrationError as exc:
        return _failed("afterpulse_tool", exc)
    return {
        "n_events": stream.n_events,
        "rate": stream.rate,
        "dead_time_s": dead.dead_time.value if dead.detected else None,
        "u_dead_time_s": dead.dead_time.u if dead.detected else None,
        "probability": estimate.probability.value,
        "u_probability": estimate.probability.u,
        "excess_to_baseline": estimate.excess_to_baseline,
    }


@mcp.tool(
    name="allan_tool",
    description="Relative Allan deviation in percent of the bright readings in a power CSV.",
)
def allan_tool(
    power_csv_path: Annotated[str, Field(description="Path of a power CSV")],
    taus: Annotated[list[float] | None, Field(description="Averaging times in s; octaves when omitted")] = None,
) -> dict:
    try:
        series = fileio.power_series(fileio.read_power_csv(power_csv_path))
        rows = relative_allan(series, taus or octave_taus(series))
    except CalibrationError as exc:
        return _failed("allan_tool", exc)
    return {"rows": [{"tau_s": tau, "relative_percent": pct} for tau, pct in rows]}


@mcp.tool(
    name="de_tool",
    description="Analyze a calibration campaign scenario and return DE with k=1 uncertainty at the target rates.",
)
def de_tool(
    scenario_path: Annotated[str, Field(description="Path of an analysis scenario TOML")],
    rates: Annotated[list[float] | None, Field(description="Target count rates in cnt/s")] = None,
) -> dict:
    try:
        scenario = fileio.load_scenario(scenario_path)
        if rates:
            scenario = scenario.model_copy(update={"target_rates": list(rates)})
        analysis, _ = analyze_scenario(scenario, load_ratecurve_config()["far_extrapolation_factor"])
        k = load_report_config()["coverage_factor"]
    except CalibrationError as exc:
        return _failed("de_tool", exc)
    return {
        "constants_version": analysis.constants.version,
        "estimates": [
            {
                "target_rate": item.estimate.target_rate,
                "de": item.estimate.de.value,
                "u": item.estimate.de.u,
                "relative_expanded_percent": item.estimate.expanded(k).relative_percent,
            }
            for item in analysis.estimates
        ],
        "warnings": analysis.warnings,
    }


@mcp.tool(
    name="simulate_tool",
    description="Simulate a campaign, time-tag or power scenario with a seed and write its files to a directory.",
)
def simulate_tool(
    scenario_path: Annotated[str, Field(description="Path of a simulation scenario TOML")],
    seed: Annotated[int, Field(description="Generator seed")] = 0,
    output_dir: Annotated[str, Field(description="Directory for the generated files")] = "simulated",
) -> dict:
    out = Path(output_dir)
    try:
        scenario = fileio.load_simulation_scenario(scenario_path)
        if isinstance(scenario, CampaignScenario):
            constants_path = fileio.resolve_constants(scenario.constants, Path(scenario_path).parent)
            campaign = simulate_campaign(scenario, fileio.load_constants(constants_path), seed)
            written = fileio.write_campaign(campaign, constants_path, out)
        elif isinstance(scenario, TimetagScenario):
            stream = simulate_detections(
                scenario.source, scenario.detector, scenario.duration_s, seed, scenario.resolution_ps * 1e-12
            )
            written = [fileio.write_timetag(stream, out / f"{scenario.name}.txt")]
        else:
            series = simulate_power_series(scenario.meters, scenario.n_samples, scenario.sample_interval_s, seed)
            written = [
                fileio.write_series(values, out / f"{meter.name}.csv")
                for meter, values in zip(scenario.meters, series)
            ]
    except CalibrationError as exc:
        return _failed("simulate_tool", exc)
    return {"kind": scenario.kind, "seed": seed, "files": [str(p) for p in written]}
