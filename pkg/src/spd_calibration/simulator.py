"""Seeded apparatus simulator.

Every routine draws from its own ``numpy.random.Generator`` (PCG64) seeded by
the caller; equal seeds and configurations give bit-identical output.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from loguru import logger
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.constants import h as PLANCK

from .allan import SampledSeries
from .errors import InvalidArgumentError, SaturationError
from .quantities import fiber_end_transmittance
from .schemas import (
    AfterpulseConstants,
    CalibrationConstants,
    CampaignScenario,
    DetectorConfig,
    PowerMeterSimConfig,
    Scenario,
    SourceConfig,
)
from .timetag import IntervalHistogram, TimeTagStream

TAGGER_RESOLUTION = 156.25e-12
PRNG_ALGORITHM = "PCG64"
_BLOCK = 65536


class _Draws:
    """Pre-drawn blocks of random numbers consumed one at a time."""

    def __init__(self, sampler: Callable[[int], np.ndarray]):
        self._sampler = sampler
        self._block = sampler(_BLOCK)
        self._index = 0

    def next(self) -> float:
        if self._index == self._block.size:
            self._block = self._sampler(_BLOCK)
            self._index = 0
        value = self._block[self._index]
        self._index += 1
        return float(value)


def _poisson_times(rng: np.random.Generator, rate: float, duration: float) -> np.ndarray:
    """Homogeneous Poisson arrivals in ``[0, duration]`` from exponential gaps."""
    if rate <= 0 or duration <= 0:
        return np.empty(0)
    expected = rate * duration
    chunk = int(expected + 5.0 * math.sqrt(expected)) + 16
    pieces = []
    last = 0.0
    while last <= duration:
        times = last + np.cumsum(rng.exponential(1.0 / rate, chunk))
        pieces.append(times)
        last = times[-1]
        chunk = max(chunk // 4, 1024)
    times = np.concatenate(pieces)
    return times[times <= duration]


def _pulsed_times(
    rng: np.random.Generator, rep_rate: float, probability: float, duration: float
) -> np.ndarray:
    """Pulse times with at least one detection, from geometric pulse gaps."""
    if probability <= 0:
        return np.empty(0)
    n_pulses = int(math.floor(duration * rep_rate))
    expected = n_pulses * probability
    chunk = int(expected + 5.0 * math.sqrt(expected)) + 16
    pieces = []
    last = -1
    while last < n_pulses:
        index = last + np.cumsum(rng.geometric(probability, chunk))
        pieces.append(index)
        last = int(index[-1])
        chunk = max(chunk // 4, 1024)
    index = np.concatenate(pieces)
    return index[index < n_pulses] / rep_rate


def candidate_rate(source: SourceConfig, det: DetectorConfig) -> float:
    """Rate of detectable events (signal plus dark) before dead time."""
    if source.mode == "cw":
        signal = source.rate * det.de_true
    else:
        signal = source.rate * (1.0 - math.exp(-source.mu_p * det.de_true))
    return signal + det.dark_rate


def expected_detected_rate(source: SourceConfig, det: DetectorConfig) -> float:
    """Non-paralyzable registered rate ``r / (1 + r tau)``, afterpulses excluded."""
    r = candidate_rate(source, det)
    return r / (1.0 + r * det.dead_time)


def _register(
    candidates: np.ndarray,
    det: DetectorConfig,
    p_after: float,
    rng: np.random.Generator,
    duration: float,
) -> np.ndarray:
    tau = det.dead_time
    n = candidates.size
    if p_after == 0:
        if tau == 0:
            return candidates
        kept = []
        i = 0
        while i < n:
            t = candidates[i]
            kept.append(t)
            i = int(np.searchsorted(candidates, t + tau, side="left"))
        return np.asarray(kept)

    uniforms = _Draws(rng.random)
    delays = _Draws(lambda size: rng.exponential(det.afterpulse_tau, size))
    pending: list[float] = []
    registered = []
    ready = -math.inf
    i = 0
    while True:
        t_photon = candidates[i] if i < n else math.inf
        if pending and pending[0] < t_photon:
            t = heapq.heappop(pending)
            is_afterpulse = True
        elif i < n:
            t = t_photon
            i += 1
            is_afterpulse = False
        else:
            break
        if t < ready or t > duration:
            continue
        registered.append(t)
        ready = t + tau
        if (det.cascade_afterpulses or not is_afterpulse) and uniforms.next() < p_after:
            heapq.heappush(pending, t + tau + delays.next())
        if tau > 0 and i < n and candidates[i] < ready:
            i = int(np.searchsorted(candidates, ready, side="left"))
    return np.asarray(registered)


def simulate_detections(
    source: SourceConfig,
    det: DetectorConfig,
    duration: float,
    seed: int,
    resolution: float = TAGGER_RESOLUTION,
) -> TimeTagStream:
    """Time-tag stream of a detector with dead time, afterpulsing and dark counts."""
    if not duration > 0:
        raise InvalidArgumentError(f"duration must be positive, got {duration}")
    r = candidate_rate(source, det)
    if r * det.dead_time >= 1:
        raise SaturationError(
            f"candidate rate {r:.4g} cnt/s x dead time {det.dead_time:.4g} s >= 1"
        )
    p_after = det.afterpulse_at(expected_detected_rate(source, det))
    if not 0 <= p_after < 1:
        raise InvalidArgumentError(f"afterpulse probability {p_after:.4g} is outside [0, 1)")

    rng = np.random.default_rng(seed)
    if source.mode == "cw":
        photons = _poisson_times(rng, source.rate, duration)
        photons = photons[rng.random(photons.size) < det.de_true]
    else:
        q = 1.0 - math.exp(-source.mu_p * det.de_true)
        photons = _pulsed_times(rng, source.rate, q, duration)
    dark = _poisson_times(rng, det.dark_rate, duration)
    candidates = np.sort(np.concatenate([photons, dark]))

    times = _register(candidates, det, p_after, rng, duration)
    ticks = np.floor(times / resolution).astype(np.int64)
    unique = np.unique(ticks)
    if unique.size < ticks.size:
        logger.debug(f"dropped {ticks.size - unique.size} events sharing a tagger tick")
    logger.debug(f"simulated {unique.size} detections in {duration} s (seed {seed})")
    return TimeTagStream(unique, resolution, duration)


def simulate_interval_histogram(
    det: DetectorConfig,
    detected_rate: float,
    n_events: int,
    bin_width: float,
    window: float,
    seed: int,
) -> IntervalHistogram:
    """Poisson-sampled interarrival-sum histogram without generating a stream.

    Uncorrelated pairs arrive at ``detected_rate`` per source event beyond the
    dead time; afterpulse pairs follow the exponential delay law.
    """
    if detected_rate * det.dead_time >= 1:
        raise SaturationError(f"detected rate x dead time = {detected_rate * det.dead_time:.4g} >= 1")
    p_after = det.afterpulse_at(detected_rate)
    n_bins = int(math.floor(window / bin_width + 1e-9)) + 1
    starts = np.arange(n_bins) * bin_width
    stops = starts + bin_width
    tau = det.dead_time
    live = np.clip(stops - np.maximum(starts, tau), 0.0, bin_width)
    uncorrelated = n_events * detected_rate * live

    def tail(t):
        return np.exp(-np.clip(t - tau, 0.0, None) / det.afterpulse_tau)

    afterpulse = n_events * p_after * (tail(starts) - tail(stops))
    rng = np.random.default_rng(seed)
    counts = rng.poisson(uncorrelated + afterpulse).astype(np.int64)
    return IntervalHistogram(bin_width, counts, window, n_events)


def simulate_power_series(
    configs: Sequence[PowerMeterSimConfig],
    n_samples: int,
    sample_interval: float = 1.0,
    seed: int = 0,
) -> list[SampledSeries]:
    """Meter readings with shared multiplicative random-walk drift and white noise.

    Channels with the same ``common_mode_id`` share one drift realization, drawn
    with the drift step of the first such channel.
    """
    if n_samples < 2:
        raise InvalidArgumentError("need at least 2 samples")
    rng = np.random.default_rng(seed)
    drifts: dict[str, np.ndarray] = {}
    series = []
    for index, config in enumerate(configs):
        key = config.common_mode_id if config.common_mode_id is not None else f"#{index}"
        if key not in drifts:
            steps = config.drift * rng.standard_normal(n_samples)
            drifts[key] = np.exp(np.cumsum(steps))
        white = 1.0 + config.white_sigma * rng.standard_normal(n_samples)
        series.append(SampledSeries(config.mean * drifts[key] * white, sample_interval))
    return series


# --- calibration campaign -------------------------------------------------


@dataclass(frozen=True)
class CampaignTruth:
    de_true: float
    dead_time: float
    draws: dict[str, float] = field(default_factory=dict)

    def de_at(self, rate: float) -> float:
        """True DE at a detected count rate, including blocking loss."""
        return self.de_true * (1.0 - self.dead_time * rate)


@dataclass
class Campaign:
    scenario: CampaignScenario
    seed: int
    counts: pd.DataFrame
    monitor: pd.DataFrame
    reference: pd.DataFrame
    truth: CampaignTruth

    @property
    def reference_unit(self) -> str:
        return "W" if self.scenario.mode == "fiber" else "V"

    def analysis_scenario(
        self,
        constants: str,
        counts: str = "counts.csv",
        monitor: str = "monitor.csv",
        reference: str = "reference.csv",
    ) -> Scenario:
        sc = self.scenario
        det = sc.detector
        return Scenario(
            name=sc.name,
            mode=sc.mode,
            constants=constants,
            counts=counts,
            monitor=monitor,
            reference=reference,
            wavelength_nm=sc.wavelength_nm,
            u_wavelength_nm=sc.u_wavelength_nm,
            n_eff=sc.n_eff,
            afterpulse=AfterpulseConstants(
                ap0=det.afterpulse_prob,
                u_ap0=sc.afterpulse_u.u_ap0,
                ap=det.afterpulse_slope,
                u_ap=sc.afterpulse_u.u_ap,
                cov=sc.afterpulse_u.cov,
                rate_min=sc.afterpulse_u.rate_min,
                rate_max=sc.afterpulse_u.rate_max,
            ),
            target_rates=list(sc.target_rates),
        )


class _Noise:
    """Gaussian draws that collapse to zero for noiseless scenarios."""

    def __init__(self, rng: np.random.Generator, noiseless: bool):
        self.rng = rng
        self.noiseless = noiseless

    def normal(self, sigma: float, size: int | None = None):
        if self.noiseless or sigma == 0:
            return 0.0 if size is None else np.zeros(size)
        return self.rng.normal(0.0, sigma, size)

    def poisson_mean(self, expected: float, n: int) -> float:
        if self.noiseless:
            return expected
        return self.rng.poisson(expected * n) / n


def _expected_counts(a: float, b: float, dark: float, ap0: float, ap_per_gate: float) -> float:
    """Solve ``C = a - b C + dark + (ap0 + ap_per_gate C) C`` for its physical root."""
    linear = 1.0 + b - ap0
    constant = a + dark
    disc = linear**2 - 4.0 * ap_per_gate * constant
    if disc < 0:
        raise SaturationError("afterpulsing makes the expected count rate diverge")
    return 2.0 * constant / (linear + math.sqrt(disc))


def simulate_campaign(
    scenario: CampaignScenario, constants: CalibrationConstants, seed: int
) -> Campaign:
    """Count, monitor and reference records of a full DE calibration campaign.

    Per-seed systematic draws perturb every calibration factor around its
    nominal value by its standard uncertainty; the analysis only sees nominal
    values. Readings are taken once per second.
    """
    rng = np.random.default_rng(seed)
    noise = _Noise(rng, scenario.noiseless)
    det = scenario.detector
    fiber = scenario.mode == "fiber"
    hc = PLANCK * SPEED_OF_LIGHT
    lam_nm = scenario.wavelength_nm
    u_osa_nm = constants.u_osa_m * 1e9

    def actual(nominal) -> float:
        q = nominal.to_uncertain() if hasattr(nominal, "to_uncertain") else nominal
        return q.value + noise.normal(q.u)

    draws = {
        "cal_nl_mon_dut": actual(constants.cal_nl_for("pm_mon", "dut")),
        "cal_nl_mon_ratio": actual(constants.cal_nl_for("pm_mon", "ratio")),
        "stab": noise.normal(constants.stab_relative * scenario.r_out_mon),
        "lambda_nm": lam_nm + noise.normal(math.hypot(scenario.u_wavelength_nm, u_osa_nm)),
        "dlambda_mon_nm": noise.normal(u_osa_nm),
        "dlambda_ref_nm": noise.normal(u_osa_nm),
    }
    b_mon = constants.b_lambda_for("pm_mon", lam_nm).value
    if fiber:
        draws["cal_nl_pm"] = actual(constants.cal_nl_for("pm", "ratio"))
        draws["cal_abs"] = actual(constants.cal_abs_value())
        b_ref = constants.b_lambda_for("pm", lam_nm).value
    else:
        draws["responsivity"] = actual(constants.responsivity_cal)
        draws["gain"] = actual(constants.gain)
        draws["v_cal"] = actual(constants.v_cal)
        b_ref = constants.b_lambda_for("sitrap", lam_nm).value
        v = constants.variability
        draws["variability"] = noise.normal(v.reflect) + noise.normal(v.collect) + noise.normal(v.align)

    eta_nominal = 1.0
    draws["eta_f"] = 1.0
    if scenario.n_eff is not None:
        eta_nominal = fiber_end_transmittance(scenario.n_eff, constants.u_eta_f).value
        draws["eta_f"] = eta_nominal + noise.normal(constants.u_eta_f)

    ap_u = scenario.afterpulse_u
    ap_mean = np.array([det.afterpulse_prob, det.afterpulse_slope])
    if scenario.noiseless or (ap_u.u_ap0 == 0 and ap_u.u_ap == 0):
        ap0_act, ap_act = ap_mean
    else:
        cov = np.array([[ap_u.u_ap0**2, ap_u.cov], [ap_u.cov, ap_u.u_ap**2]])
        ap0_act, ap_act = rng.multivariate_normal(ap_mean, cov, method="eigh")
    draws["ap0"], draws["ap"] = float(ap0_act), float(ap_act)

    r0 = scenario.r_out_mon
    g = scenario.gate_s
    monitor_rows: list[tuple[float, float, str, int]] = []
    reference_rows: list[tuple[float, float, str, int]] = []

    def mon_reading(power: float, cal: float, t: float, range_id: str):
        value = power * cal * (1.0 - b_mon * draws["dlambda_mon_nm"])
        value = value * (1.0 + noise.normal(scenario.monitor_noise)) + scenario.monitor_dark_w
        monitor_rows.append((t, float(value), range_id, 0))

    def dark_rows(rows, level: float, relative: float, t0: float, n: int, range_id: str):
        for k in range(n):
            rows.append((t0 + k, float(level * (1.0 + noise.normal(relative))), range_id, 1))

    # dark counts and monitor dark level
    t = 0.0
    n_dark_s = max(int(round(scenario.n_dark_gates * g)), 2)
    c_dark = noise.poisson_mean(det.dark_rate * g, scenario.n_dark_gates)
    dark_rows(monitor_rows, scenario.monitor_dark_w, scenario.monitor_noise, t, n_dark_s, "dut")
    t += n_dark_s

    # output-to-monitor ratio
    p_ratio = scenario.ratio_monitor_power_w
    n_ratio = scenario.n_ratio_samples
    n_ratio_dark = max(n_ratio // 10, 2)
    dark_rows(monitor_rows, scenario.monitor_dark_w, scenario.monitor_noise, t, n_ratio_dark, "ratio")
    dark_rows(reference_rows, scenario.reference_dark, scenario.reference_noise, t, n_ratio_dark, "ratio")
    t += n_ratio_dark
    for k in range(n_ratio):
        mon_reading(p_ratio, draws["cal_nl_mon_ratio"], t + k, "ratio")
        out = r0 * p_ratio
        if fiber:
            value = out * draws["cal_nl_pm"] * draws["cal_abs"]
        else:
            value = out * draws["responsivity"] * draws["gain"] / draws["v_cal"]
        value *= (1.0 - b_ref * draws["dlambda_ref_nm"]) * (1.0 + noise.normal(scenario.reference_noise))
        reference_rows.append((t + k, float(value + scenario.reference_dark), "ratio", 0))
    t += n_ratio

    # count-rate measurements, one per setting and repeat
    lam_act = draws["lambda_nm"] * 1e-9
    r_act = r0 + draws["stab"]
    flux_factor = (1.0 + draws.get("variability", 0.0)) * draws["eta_f"] * lam_act / hc
    window = scenario.n_gates * g
    n_mon = max(int(math.floor(window)), 2)
    count_rows = []
    for index, photon_rate in enumerate(scenario.photon_rates):
        setting_id = f"s{index + 1:02d}"
        p_mon = photon_rate * hc / (lam_nm * 1e-9 * eta_nominal) / r0
        for repeat in range(scenario.repeats):
            flux = p_mon * r_act * flux_factor
            dark_rate = det.dark_rate
            if scenario.bistable_dark and t >= scenario.bistable_dark.switch_time_s:
                dark_rate += scenario.bistable_dark.extra_rate
            expected = _expected_counts(
                a=det.de_true * flux * g,
                b=det.de_true * flux * det.dead_time,
                dark=dark_rate * g,
                ap0=draws["ap0"],
                ap_per_gate=draws["ap"] / g,
            )
            if expected * det.dead_time / g >= 1:
                raise SaturationError(f"setting {setting_id} saturates the detector")
            c_bar = noise.poisson_mean(expected, scenario.n_gates)
            for k in range(n_mon):
                mon_reading(p_mon, draws["cal_nl_mon_dut"], t + k, "dut")
            count_rows.append(
                (setting_id, repeat, t, t + window, g, scenario.n_gates, float(c_bar),
                 scenario.n_dark_gates, float(c_dark))
            )
            t += max(window, n_mon) + 1.0

    counts = pd.DataFrame(
        count_rows,
        columns=["setting_id", "repeat", "t_start_s", "t_stop_s", "gate_s", "n_gates",
                 "c_bar", "n_dark_gates", "c_dark"],
    )
    columns = ["t_s", "reading", "range_id", "dark"]
    monitor = pd.DataFrame(monitor_rows, columns=columns).sort_values("t_s", kind="stable")
    reference = pd.DataFrame(reference_rows, columns=columns).sort_values("t_s", kind="stable")
    logger.info(
        f"simulated campaign {scenario.name!r}: {len(counts)} count records, seed {seed}"
    )
    return Campaign(
        scenario=scenario,
        seed=seed,
        counts=counts,
        monitor=monitor.reset_index(drop=True),
        reference=reference.reset_index(drop=True),
        truth=CampaignTruth(det.de_true, det.dead_time, {k: float(v) for k, v in draws.items()}),
    )
