"""Detection-efficiency measurement equations and their GUM uncertainty budgets.

Fiber-coupled:  DE = C_diff / PM_mon_diff * h c / (lambda_c * eta_f) / R
Free-space:     DE_FSM = C_diff / PM_mon_diff * h c / lambda_c / RV + variability terms

Every analytic budget has a Monte Carlo counterpart in ``MODELS`` that samples
the same inputs jointly and evaluates the equation per draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from loguru import logger
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.constants import h as PLANCK

from .errors import InsufficientDataError, InvalidArgumentError, MonteCarloError
from .quantities import CorrelatedPair, Uncertain, WavelengthCorrection, quadrature
from .schemas import CalibrationConstants
from .timetag import AfterpulseModel

HC = PLANCK * SPEED_OF_LIGHT
PLAUSIBLE_DE = (0.0, 1.5)


@dataclass(frozen=True)
class BudgetComponent:
    name: str
    relative_u: float
    share: float = 0.0

    @property
    def relative_percent(self) -> float:
        return 100.0 * self.relative_u


def with_shares(components: Sequence[BudgetComponent]) -> list[BudgetComponent]:
    total = sum(c.relative_u**2 for c in components)
    return [
        BudgetComponent(c.name, c.relative_u, (c.relative_u**2 / total) if total > 0 else 0.0)
        for c in components
    ]


@dataclass(frozen=True)
class EfficiencyResult:
    de: Uncertain
    components: list[BudgetComponent]
    plausible: bool = True
    warnings: tuple[str, ...] = ()

    def component(self, name: str) -> BudgetComponent:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)


def _check_plausible(de: float) -> tuple[bool, tuple[str, ...]]:
    lo, hi = PLAUSIBLE_DE
    if lo < de < hi:
        return True, ()
    message = f"DE = {de:.6g} is outside the plausible range ({lo}, {hi})"
    logger.warning(message)
    return False, (message,)


# --- counts ---------------------------------------------------------------


@dataclass(frozen=True)
class CountObservation:
    """Mean bright and dark counts per gate interval."""

    c_bar: float
    c_dark: float
    n_intervals: int
    n_dark_intervals: int | None = None
    gate_time: float = 1.0
    u_c: float | None = None
    u_dark: float | None = None

    def __post_init__(self):
        if not self.c_bar >= self.c_dark >= 0:
            raise InvalidArgumentError(
                f"need c_bar >= c_dark >= 0, got c_bar={self.c_bar}, c_dark={self.c_dark}"
            )
        if self.n_intervals < 1:
            raise InvalidArgumentError("need at least one counting interval")
        if not self.gate_time > 0:
            raise InvalidArgumentError("gate time must be positive")

    @property
    def rate(self) -> float:
        return self.c_bar / self.gate_time

    @property
    def bright(self) -> Uncertain:
        u = self.u_c if self.u_c is not None else math.sqrt(self.c_bar / self.n_intervals)
        return Uncertain(self.c_bar, u)

    @property
    def dark(self) -> Uncertain:
        n_dark = self.n_dark_intervals or self.n_intervals
        u = self.u_dark if self.u_dark is not None else math.sqrt(self.c_dark / n_dark)
        return Uncertain(self.c_dark, u)


def corrected_counts(obs: CountObservation, model: AfterpulseModel) -> Uncertain:
    """Dark- and afterpulse-corrected counts per gate.

    ``C_diff = (1 - ap0) C - C_drk - ap C^2 / gate``; the afterpulse rate
    coefficient acts on the count rate ``C / gate``.
    """
    c, d = obs.bright, obs.dark
    g = obs.gate_time
    ap0, ap, cov = model.ap0, model.ap, model.cov_ap0_ap
    if not model.rate_min <= obs.rate <= model.rate_max:
        logger.warning(
            f"count rate {obs.rate:.4g} cnt/s is outside the afterpulse fit range "
            f"[{model.rate_min:.4g}, {model.rate_max:.4g}]"
        )

    value = (1.0 - ap0.value) * c.value - d.value - ap.value * c.value**2 / g
    if value < 0:
        raise InvalidArgumentError(
            f"corrected counts are negative ({value:.6g}); dark counts exceed the bright signal"
        )
    d_c = (1.0 - ap0.value) - 2.0 * ap.value * c.value / g
    d_ap0 = -c.value
    d_ap = -c.value**2 / g
    variance = (
        (d_c * c.u) ** 2
        + d.u**2
        + (d_ap0 * ap0.u) ** 2
        + (d_ap * ap.u) ** 2
        + 2.0 * d_ap0 * d_ap * cov
    )
    return Uncertain(value, math.sqrt(max(variance, 0.0)))


# --- power meters ---------------------------------------------------------


def _mean_and_u(readings: np.ndarray) -> tuple[float, float]:
    if readings.size == 0:
        return 0.0, 0.0
    mean = float(readings.mean())
    if readings.size < 2:
        return mean, 0.0
    return mean, float(readings.std(ddof=1) / math.sqrt(readings.size))


@dataclass(frozen=True)
class PowerObservation:
    bright_readings: np.ndarray
    dark_readings: np.ndarray
    cal_nl: Uncertain
    b_lambda: Uncertain = Uncertain(0.0, 0.0)
    delta_lambda_osa: Uncertain = Uncertain(0.0, 0.0)
    cal_abs: Uncertain = Uncertain(1.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "bright_readings", np.asarray(self.bright_readings, dtype=float))
        object.__setattr__(self, "dark_readings", np.asarray(self.dark_readings, dtype=float))

    def osa_correction(self, scale: float) -> WavelengthCorrection:
        return WavelengthCorrection(self.b_lambda, self.delta_lambda_osa, Uncertain(scale, 0.0))


def monitor_power(obs: PowerObservation) -> Uncertain:
    """Dark-subtracted, wavelength- and nonlinearity-corrected meter power.

    The OSA scale is the mean bright-minus-dark reading of the same meter.
    """
    if obs.bright_readings.size < 2:
        raise InsufficientDataError("need at least 2 bright power readings")
    if obs.dark_readings.size == 0:
        logger.warning("no dark readings; assuming a dark level of 0")
    bright, u_bright = _mean_and_u(obs.bright_readings)
    dark, u_dark = _mean_and_u(obs.dark_readings)
    diff = bright - dark
    osa = obs.osa_correction(diff)
    numerator = diff + osa.value
    if numerator <= 0:
        raise InvalidArgumentError(f"dark-subtracted power is not positive ({numerator:.6g} W)")
    u_numerator = math.sqrt(u_bright**2 + u_dark**2 + osa.u**2)
    cal = obs.cal_nl.value * obs.cal_abs.value
    value = numerator / cal
    relative = quadrature(u_numerator / numerator, obs.cal_nl.relative, obs.cal_abs.relative)
    return Uncertain(value, abs(value) * relative)


def ratio_from_powers(x: Uncertain, y: Uncertain, stab: Uncertain, cov_xy: float = 0.0) -> Uncertain:
    if y.value <= 0:
        raise InvalidArgumentError(f"monitor power must be positive, got {y.value}")
    if x.value <= 0:
        raise InvalidArgumentError(f"output power must be positive, got {x.value}")
    CorrelatedPair(x, y, cov_xy)
    quotient = x.value / y.value
    value = quotient + stab.value
    if value <= 0:
        raise InvalidArgumentError(f"output-to-monitor ratio is not positive ({value:.6g})")
    variance = quotient**2 * (x.relative**2 + y.relative**2 - 2.0 * cov_xy / (x.value * y.value))
    variance += stab.u**2
    return Uncertain(value, math.sqrt(max(variance, 0.0)))


def ratio_fiber(
    x_obs: PowerObservation, y_obs: PowerObservation, stab: Uncertain, cov_xy: float = 0.0
) -> Uncertain:
    """Output-to-monitor ratio ``R = X / Y + stab``; ``x_obs`` carries ``cal_abs``."""
    return ratio_from_powers(monitor_power(x_obs), monitor_power(y_obs), stab, cov_xy)


# --- trap detector --------------------------------------------------------


@dataclass(frozen=True)
class TrapObservation:
    v_bright: np.ndarray
    v_dark: np.ndarray
    v_cal: Uncertain
    responsivity_cal: Uncertain
    gain: Uncertain
    b_lambda: Uncertain = Uncertain(0.0, 0.0)
    delta_lambda_osa: Uncertain = Uncertain(0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "v_bright", np.asarray(self.v_bright, dtype=float))
        object.__setattr__(self, "v_dark", np.asarray(self.v_dark, dtype=float))

    @property
    def responsivity(self) -> Uncertain:
        osa = WavelengthCorrection(
            self.b_lambda, self.delta_lambda_osa, Uncertain(self.responsivity_cal.value, 0.0)
        )
        value = self.responsivity_cal.value + osa.value
        return Uncertain(value, math.hypot(self.responsivity_cal.u, osa.u))

    def voltages(self) -> tuple[Uncertain, Uncertain]:
        """Calibrated bright and dark mean voltages.

        The voltmeter correction uncertainty enters each mean separately.
        """
        if self.v_bright.size < 1:
            raise InsufficientDataError("need at least one bright trap voltage")
        if self.v_dark.size == 0:
            logger.warning("no dark trap voltages; assuming a dark level of 0")
        rel = self.v_cal.relative
        k = self.v_cal.value
        bright, u_bright = _mean_and_u(self.v_bright)
        dark, u_dark = _mean_and_u(self.v_dark)
        return (
            Uncertain(k * bright, abs(k) * math.hypot(u_bright, rel * bright)),
            Uncertain(k * dark, abs(k) * math.hypot(u_dark, rel * dark)),
        )


def trap_power(trap: TrapObservation) -> Uncertain:
    """``W = (V - V_drk) / (R g)``."""
    v, v_dark = trap.voltages()
    responsivity = trap.responsivity
    signal = v.value - v_dark.value
    if signal <= 0 or responsivity.value <= 0 or trap.gain.value <= 0:
        raise InvalidArgumentError(
            f"trap power is not positive (V - V_drk = {signal:.6g} V, R = {responsivity.value:.6g} A/W, "
            f"g = {trap.gain.value:.6g} V/A)"
        )
    value = signal / (responsivity.value * trap.gain.value)
    relative = quadrature(
        math.hypot(v.u, v_dark.u) / signal, responsivity.relative, trap.gain.relative
    )
    return Uncertain(value, value * relative)


def ratio_freespace(
    trap: TrapObservation, y_obs: PowerObservation, stab: Uncertain, cov_wy: float = 0.0
) -> Uncertain:
    """``RV = W / Y + stab``."""
    return ratio_from_powers(trap_power(trap), monitor_power(y_obs), stab, cov_wy)


# --- detection efficiency -------------------------------------------------


def de_fiber(
    c: Uncertain,
    pm: Uncertain,
    lambda_c: Uncertain,
    eta_f: Uncertain | None,
    r: Uncertain,
    cov_c_pm: float = 0.0,
) -> EfficiencyResult:
    """Fiber-coupled DE from corrected count rate, monitor power, wavelength (m),
    fiber-end transmittance and output-to-monitor ratio.

    ``eta_f=None`` means the DUT has no fiber junction; the factor is then exactly 1.
    """
    for name, q in (("count rate", c), ("monitor power", pm), ("wavelength", lambda_c), ("ratio", r)):
        if q.value <= 0:
            raise InvalidArgumentError(f"{name} must be positive, got {q.value}")
    if eta_f is not None and not 0 < eta_f.value <= 1:
        raise InvalidArgumentError(f"eta_f must be in (0, 1], got {eta_f.value}")
    CorrelatedPair(c, pm, cov_c_pm)

    eta = 1.0 if eta_f is None else eta_f.value
    value = c.value / pm.value * HC / (lambda_c.value * eta) / r.value
    components = [
        BudgetComponent("C_diff", c.relative),
        BudgetComponent("PM_mon_diff", pm.relative),
        BudgetComponent("lambda_c", lambda_c.relative),
        BudgetComponent("eta_f", 0.0 if eta_f is None else eta_f.relative),
        BudgetComponent("R_out_mon", r.relative),
    ]
    variance = sum(comp.relative_u**2 for comp in components)
    variance -= 2.0 * cov_c_pm / (c.value * pm.value)
    de = Uncertain(value, value * math.sqrt(max(variance, 0.0)))
    plausible, warnings = _check_plausible(value)
    return EfficiencyResult(de, with_shares(components), plausible, warnings)


@dataclass(frozen=True)
class FreeSpaceVariability:
    """Zero-mean reflection, collection and alignment terms, as relative fractions."""

    reflect: float = 0.0
    collect: float = 0.0
    align: float = 0.0

    @classmethod
    def from_percent(cls, reflect: float, collect: float, align: float) -> "FreeSpaceVariability":
        return cls(reflect / 100.0, collect / 100.0, align / 100.0)

    def terms(self, de_free: float) -> dict[str, Uncertain]:
        return {
            "DE_reflect": Uncertain(0.0, self.reflect * de_free),
            "DE_collect": Uncertain(0.0, self.collect * de_free),
            "DE_align": Uncertain(0.0, self.align * de_free),
        }

    @property
    def combined_relative(self) -> float:
        return quadrature(self.reflect, self.collect, self.align)


def de_freespace(
    c: Uncertain,
    pm: Uncertain,
    lambda_c: Uncertain,
    rv: Uncertain,
    variability: FreeSpaceVariability,
    cov_c_pm: float = 0.0,
) -> EfficiencyResult:
    """Free-space DE: the fiber equation without eta_f plus the variability terms."""
    free = de_fiber(c, pm, lambda_c, None, rv, cov_c_pm)
    de_free = free.de.value
    terms = variability.terms(de_free)
    value = de_free + sum(t.value for t in terms.values())
    u = math.sqrt(free.de.u**2 + sum(t.u**2 for t in terms.values()))
    components = [comp for comp in free.components if comp.name != "eta_f"]
    components = [
        BudgetComponent("RV" if comp.name == "R_out_mon" else comp.name, comp.relative_u)
        for comp in components
    ]
    components += [BudgetComponent(name, t.u / de_free) for name, t in terms.items()]
    plausible, warnings = _check_plausible(value)
    return EfficiencyResult(Uncertain(value, u), with_shares(components), plausible, warnings)


# --- Table-3 style systematic budget -------------------------------------


def systematic_budget(constants: CalibrationConstants, wavelength_nm: float) -> list[BudgetComponent]:
    """Systematic relative standard uncertainties in the order of the published summary."""
    mon_dut = constants.cal_nl_for("pm_mon", "dut").relative
    mon_ratio = constants.cal_nl_for("pm_mon", "ratio").relative
    rows = [
        BudgetComponent("cal_nl_mon", mon_dut),
        BudgetComponent("cal_nl_mon_R", mon_ratio),
        BudgetComponent("stab", constants.stab_relative),
    ]
    if constants.mode == "fiber":
        rows += [
            BudgetComponent("cal_abs", constants.cal_abs_value().relative),
            BudgetComponent("cal_nl_PM", constants.cal_nl_for("pm", "ratio").relative),
        ]
    else:
        rows += [
            BudgetComponent("R_cal", constants.responsivity_cal.to_uncertain().relative),
            BudgetComponent("g", constants.gain.to_uncertain().relative),
            BudgetComponent("V_cal", constants.v_cal.to_uncertain().relative),
        ]
    rows.append(BudgetComponent("OSA", constants.u_osa_m / (wavelength_nm * 1e-9)))
    if constants.mode == "fiber":
        rows.append(BudgetComponent("eta_f", constants.u_eta_f))
    else:
        v = constants.variability
        rows += [
            BudgetComponent("DE_reflect", v.reflect),
            BudgetComponent("DE_collect", v.collect),
            BudgetComponent("DE_align", v.align),
        ]
    return with_shares(rows)


# --- Monte Carlo propagation ----------------------------------------------


@dataclass(frozen=True)
class MeasurementModel:
    name: str
    inputs: tuple[str, ...]
    function: Callable[..., np.ndarray] = field(repr=False)


MODELS: dict[str, MeasurementModel] = {}


def register_model(name: str, inputs: Sequence[str]):
    def decorator(function):
        MODELS[name] = MeasurementModel(name, tuple(inputs), function)
        return function

    return decorator


@register_model("de_fiber", ("c", "pm", "lambda_c", "eta_f", "r"))
def _de_fiber_model(c, pm, lambda_c, eta_f, r, **_):
    return c / pm * HC / (lambda_c * eta_f) / r


@register_model(
    "de_freespace", ("c", "pm", "lambda_c", "rv", "DE_reflect", "DE_collect", "DE_align")
)
def _de_freespace_model(c, pm, lambda_c, rv, DE_reflect, DE_collect, DE_align, **_):
    return c / pm * HC / lambda_c / rv + DE_reflect + DE_collect + DE_align


@register_model("ratio_fiber", ("x", "y", "stab"))
def _ratio_fiber_model(x, y, stab, **_):
    return x / y + stab


@register_model("ratio_freespace", ("v_bright", "v_dark", "responsivity", "gain", "y", "stab"))
def _ratio_freespace_model(v_bright, v_dark, responsivity, gain, y, stab, **_):
    return (v_bright - v_dark) / (responsivity * gain) / y + stab


@register_model("corrected_counts", ("c_bar", "c_dark", "ap0", "ap"))
def _corrected_counts_model(c_bar, c_dark, ap0, ap, gate_time=1.0, **_):
    return (1.0 - ap0) * c_bar - c_dark - ap * c_bar**2 / gate_time


def monte_carlo_uncertainty(
    model: str | MeasurementModel,
    inputs: Mapping[str, Uncertain],
    covariances: Mapping[tuple[str, str], float] | None = None,
    n_draws: int = 100_000,
    seed: int = 0,
    constants: Mapping[str, float] | None = None,
    min_draws: int = 10_000,
    max_nonfinite_fraction: float = 1e-3,
) -> Uncertain:
    """Propagate Gaussian inputs through ``model`` by sampling; mean and std of the draws."""
    if isinstance(model, str):
        try:
            model = MODELS[model]
        except KeyError as exc:
            raise InvalidArgumentError(
                f"unknown measurement model {model!r}; known: {sorted(MODELS)}"
            ) from exc
    if n_draws < min_draws:
        raise InvalidArgumentError(f"need at least {min_draws} draws, got {n_draws}")
    missing = [name for name in model.inputs if name not in inputs]
    if missing:
        raise InvalidArgumentError(f"model {model.name!r} is missing inputs {missing}")

    names = list(model.inputs)
    mean = np.array([inputs[n].value for n in names])
    sigma = np.array([inputs[n].u for n in names])
    rng = np.random.default_rng(seed)
    if covariances:
        cov = np.diag(sigma**2)
        index = {n: i for i, n in enumerate(names)}
        for (a, b), value in covariances.items():
            CorrelatedPair(inputs[a], inputs[b], value)
            cov[index[a], index[b]] = cov[index[b], index[a]] = value
        draws = rng.multivariate_normal(mean, cov, size=n_draws, method="eigh")
    else:
        draws = mean + sigma * rng.standard_normal((n_draws, len(names)))

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        values = np.asarray(
            model.function(**{n: draws[:, i] for i, n in enumerate(names)}, **(constants or {})),
            dtype=float,
        )
    finite = np.isfinite(values)
    n_bad = int(values.size - finite.sum())
    if n_bad > max_nonfinite_fraction * n_draws:
        raise MonteCarloError(
            f"{n_bad} of {n_draws} draws of {model.name!r} are not finite "
            f"(limit {max_nonfinite_fraction:.2%})"
        )
    values = values[finite]
    logger.debug(f"monte carlo {model.name}: {values.size} finite draws, seed {seed}")
    return Uncertain(float(values.mean()), float(values.std(ddof=1)))


def systematic_monte_carlo(
    constants: CalibrationConstants,
    wavelength_nm: float,
    n_draws: int = 100_000,
    seed: int = 0,
) -> float:
    """Relative combined systematic uncertainty of DE by sampling the measurement equation.

    Unit signal inputs carry the grouped systematic components, so the result
    is directly comparable with the quadrature sum of ``systematic_budget``.
    """
    rows = {c.name: c.relative_u for c in systematic_budget(constants, wavelength_nm)}
    lam = wavelength_nm * 1e-9
    c = Uncertain(lam / HC, 0.0)
    pm = Uncertain(1.0, rows["cal_nl_mon"])
    lambda_c = Uncertain(lam, lam * rows["OSA"])
    if constants.mode == "fiber":
        r = Uncertain(1.0, quadrature(rows["cal_nl_mon_R"], rows["stab"], rows["cal_abs"], rows["cal_nl_PM"]))
        inputs = {"c": c, "pm": pm, "lambda_c": lambda_c, "eta_f": Uncertain(1.0, rows["eta_f"]), "r": r}
        draws = monte_carlo_uncertainty("de_fiber", inputs, n_draws=n_draws, seed=seed)
    else:
        rv = Uncertain(
            1.0, quadrature(rows["cal_nl_mon_R"], rows["stab"], rows["R_cal"], rows["g"], rows["V_cal"])
        )
        inputs = {"c": c, "pm": pm, "lambda_c": lambda_c, "rv": rv}
        inputs.update({name: Uncertain(0.0, rows[name]) for name in ("DE_reflect", "DE_collect", "DE_align")})
        draws = monte_carlo_uncertainty("de_freespace", inputs, n_draws=n_draws, seed=seed)
    return draws.u / draws.value
