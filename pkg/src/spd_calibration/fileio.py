"""Readers and writers for the line-oriented text formats.

Every reader raises ``ParseError`` naming the file, the 1-based line and what
was expected there. Writers emit ``\\n`` line endings and ``repr``-exact floats
so identical inputs give byte-identical files.
"""

from __future__ import annotations

import hashlib
import math
import re
import sys
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

import numpy as np
import pandas as pd
import tomli_w
from loguru import logger
from pydantic import ValidationError

from .allan import SampledSeries
from .beamscan import ScanGrid
from .consensus import RunResult
from .errors import InvalidArgumentError, ParseError
from .quantities import Uncertain
from .ratecurve import RatePoint
from .schemas import (
    CalibrationConstants,
    CampaignScenario,
    PowerScenario,
    Scenario,
    TimetagScenario,
)
from .timetag import IntervalHistogram, TimeTagStream

POWER_COLUMNS = ("t_s", "range_id", "dark")
COUNTS_COLUMNS = (
    "setting_id", "repeat", "t_start_s", "t_stop_s", "gate_s",
    "n_gates", "c_bar", "n_dark_gates", "c_dark",
)
RATE_POINT_COLUMNS = ("setting_id", "rate_cps", "de", "u_de")
RUN_COLUMNS = ("label", "lambda_nm", "u_lambda", "temp_C", "u_temp", "r_out_mon", "u_r", "de", "u_de")

_HEADER = re.compile(r"^#\s*(\w+)\s*=\s*(\S+)\s*$")
_SCAN_HEADER = re.compile(r"^#\s*x_step_um\s*=\s*(\S+)\s+y_step_um\s*=\s*(\S+)\s*$")


def file_digest(path: str | Path) -> str:
    """SHA-256 of the file contents, hex encoded."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _read_lines(path: Path) -> list[str]:
    try:
        return path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise ParseError(path, 0, "an existing file") from None


def _read_frame(path: str | Path, required: Sequence[str], **kwargs) -> pd.DataFrame:
    path = Path(path)
    try:
        frame = pd.read_csv(path, skip_blank_lines=False, **kwargs)
    except FileNotFoundError:
        raise ParseError(path, 0, "an existing file") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ParseError(path, 1, f"a CSV table ({exc})") from exc
    frame.columns = [str(c).strip() for c in frame.columns]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ParseError(path, 1, f"a header with columns {', '.join(required)} (missing {', '.join(missing)})")
    blank = frame.isna().all(axis=1)
    if blank.any():
        raise ParseError(path, int(np.flatnonzero(blank)[0]) + 2, "a data row, not a blank line")
    return frame


def _numeric(frame: pd.DataFrame, column: str, path: str | Path, integer: bool = False) -> np.ndarray:
    """Column as floats; ``ParseError`` points at the first bad row (header is line 1)."""
    values = pd.to_numeric(frame[column], errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if integer:
        bad |= np.isfinite(values) & (values != np.round(values))
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        kind = "an integer" if integer else "a finite number"
        raise ParseError(path, row + 2, f"{kind} in column {column!r}, got {frame[column].iloc[row]!r}")
    return values


def write_table(frame: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    logger.debug(f"wrote {len(frame)} rows to {path}")
    return path


# --- time tags ------------------------------------------------------------


def read_timetag(path: str | Path) -> TimeTagStream:
    """``# resolution_ps=<decimal>``, ``# duration_s=<decimal>``, then one tick per line."""
    path = Path(path)
    lines = _read_lines(path)
    header = {}
    for number, key in ((1, "resolution_ps"), (2, "duration_s")):
        match = _HEADER.match(lines[number - 1]) if len(lines) >= number else None
        if not match or match.group(1) != key:
            raise ParseError(path, number, f"'# {key}=<decimal>'")
        try:
            header[key] = float(match.group(2))
        except ValueError:
            raise ParseError(path, number, f"a decimal value for {key}") from None
        if not (math.isfinite(header[key]) and header[key] > 0):
            raise ParseError(path, number, f"a positive {key}")

    body = pd.Series(lines[2:], dtype=object).str.strip()
    valid = body.str.fullmatch(r"\d{1,18}").to_numpy(dtype=bool)
    if not valid.all():
        index = int(np.flatnonzero(~valid)[0])
        raise ParseError(path, index + 3, "an unsigned decimal tick")
    ticks = body.astype(np.int64).to_numpy()
    decreasing = np.flatnonzero(np.diff(ticks) <= 0)
    if decreasing.size:
        index = int(decreasing[0]) + 1
        raise ParseError(
            path, index + 3, f"a tick greater than {ticks[index - 1]} (strictly increasing)"
        )
    resolution = header["resolution_ps"] * 1e-12
    duration = header["duration_s"]
    if ticks.size and ticks[-1] * resolution > duration * (1 + 1e-12):
        raise ParseError(path, len(lines), f"ticks within the declared duration {duration} s")
    logger.info(f"loaded {ticks.size} time tags from {path}")
    return TimeTagStream(ticks, resolution, duration)


def write_timetag(stream: TimeTagStream, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(f"# resolution_ps={stream.resolution * 1e12:.12g}\n")
        handle.write(f"# duration_s={stream.duration!r}\n")
        handle.writelines(f"{int(t)}\n" for t in stream.ticks)
    logger.debug(f"wrote {stream.n_events} time tags to {path}")
    return path


def write_histogram(hist: IntervalHistogram, path: str | Path) -> Path:
    return write_table(pd.DataFrame({"t_s": hist.bin_starts, "counts": hist.counts}), path)


# --- power readings -------------------------------------------------------


def read_power_csv(path: str | Path) -> pd.DataFrame:
    """Power or trap-voltage log with columns ``t_s, reading_W|reading_V, range_id, dark``.

    The reading column is renamed to ``reading``; ``frame.attrs["unit"]`` keeps
    its unit.
    """
    frame = _read_frame(path, POWER_COLUMNS, dtype={"range_id": str})
    unit_columns = [c for c in ("reading_W", "reading_V") if c in frame.columns]
    if len(unit_columns) != 1:
        raise ParseError(path, 1, "exactly one of the columns reading_W, reading_V")
    column = unit_columns[0]
    out = pd.DataFrame(
        {
            "t_s": _numeric(frame, "t_s", path),
            "reading": _numeric(frame, column, path),
            "range_id": frame["range_id"].astype(str).str.strip(),
            "dark": _numeric(frame, "dark", path, integer=True).astype(int),
        }
    )
    bad = ~out["dark"].isin([0, 1])
    if bad.any():
        raise ParseError(path, int(np.flatnonzero(bad)[0]) + 2, "dark flag 0 or 1")
    out.attrs["unit"] = column.split("_")[1]
    logger.info(f"loaded {len(out)} {column} readings from {path}")
    return out


def write_power_csv(frame: pd.DataFrame, path: str | Path, unit: str = "W") -> Path:
    if unit not in ("W", "V"):
        raise InvalidArgumentError(f"power unit must be 'W' or 'V', got {unit!r}")
    out = frame.rename(columns={"reading": f"reading_{unit}"})
    return write_table(out[["t_s", f"reading_{unit}", "range_id", "dark"]], path)


def select_readings(
    frame: pd.DataFrame,
    range_id: str | None = None,
    dark: bool = False,
    t_start: float | None = None,
    t_stop: float | None = None,
) -> np.ndarray:
    """Readings of one range, bright or dark, optionally within ``[t_start, t_stop]``."""
    mask = frame["dark"] == int(dark)
    if range_id is not None:
        mask &= frame["range_id"] == range_id
    if t_start is not None:
        mask &= frame["t_s"] >= t_start
    if t_stop is not None:
        mask &= frame["t_s"] <= t_stop
    return frame.loc[mask, "reading"].to_numpy(dtype=float)


def power_series(frame: pd.DataFrame, range_id: str | None = None) -> SampledSeries:
    """Bright readings as a sampled series; the interval is the median time step."""
    bright = frame[frame["dark"] == 0]
    if range_id is not None:
        bright = bright[bright["range_id"] == range_id]
    times = bright["t_s"].to_numpy(dtype=float)
    steps = np.diff(times)
    interval = float(np.median(steps)) if steps.size else 1.0
    if steps.size and not np.allclose(steps, interval, rtol=1e-6, atol=0):
        logger.warning(f"power readings are not evenly spaced; using the median step {interval} s")
    return SampledSeries(bright["reading"].to_numpy(dtype=float), interval)


def write_series(series: SampledSeries, path: str | Path, range_id: str = "dut") -> Path:
    n = len(series)
    frame = pd.DataFrame(
        {
            "t_s": np.arange(n) * series.sample_interval,
            "reading": series.values,
            "range_id": [range_id] * n,
            "dark": np.zeros(n, dtype=int),
        }
    )
    return write_power_csv(frame, path, "W")


# --- counts, rate points, runs -------------------------------------------


def read_counts_csv(path: str | Path) -> pd.DataFrame:
    frame = _read_frame(path, COUNTS_COLUMNS, dtype={"setting_id": str})
    out = pd.DataFrame({"setting_id": frame["setting_id"].astype(str).str.strip()})
    for column in COUNTS_COLUMNS[1:]:
        integer = column in ("repeat", "n_gates", "n_dark_gates")
        values = _numeric(frame, column, path, integer=integer)
        out[column] = values.astype(int) if integer else values
    logger.info(f"loaded {len(out)} count records from {path}")
    return out


def write_counts_csv(frame: pd.DataFrame, path: str | Path) -> Path:
    return write_table(frame[list(COUNTS_COLUMNS)], path)


def read_rate_points(path: str | Path) -> list[RatePoint]:
    frame = _read_frame(path, RATE_POINT_COLUMNS, dtype={"setting_id": str})
    rates = _numeric(frame, "rate_cps", path)
    de = _numeric(frame, "de", path)
    u_de = _numeric(frame, "u_de", path)
    points = []
    for row, (sid, rate, value, u) in enumerate(zip(frame["setting_id"], rates, de, u_de)):
        try:
            points.append(RatePoint(rate, Uncertain(value, u), str(sid).strip()))
        except InvalidArgumentError as exc:
            raise ParseError(path, row + 2, f"a valid rate point ({exc})") from exc
    return points


def write_rate_points(points: Iterable[RatePoint], path: str | Path) -> Path:
    rows = [(p.setting_id, p.rate, p.de.value, p.de.u) for p in points]
    return write_table(pd.DataFrame(rows, columns=list(RATE_POINT_COLUMNS)), path)


def read_runs(path: str | Path) -> list[RunResult]:
    """Per-run results with columns ``label, lambda_nm, u_lambda, temp_C, u_temp, r_out_mon, u_r, de, u_de``."""
    frame = _read_frame(path, RUN_COLUMNS, dtype={"label": str})
    columns = {c: _numeric(frame, c, path) for c in RUN_COLUMNS[1:]}
    runs = []
    for row in range(len(frame)):
        value = {c: columns[c][row] for c in columns}
        try:
            runs.append(
                RunResult(
                    de=Uncertain(value["de"], value["u_de"]),
                    label=str(frame["label"].iloc[row]).strip(),
                    wavelength=Uncertain(value["lambda_nm"], value["u_lambda"]),
                    r_out_mon=Uncertain(value["r_out_mon"], value["u_r"]),
                    temperature=Uncertain(value["temp_C"], value["u_temp"]),
                )
            )
        except InvalidArgumentError as exc:
            raise ParseError(path, row + 2, f"a valid run result ({exc})") from exc
    logger.info(f"loaded {len(runs)} runs from {path}")
    return runs


# --- scans ----------------------------------------------------------------


def read_scan(path: str | Path) -> ScanGrid:
    """``# x_step_um=<d> y_step_um=<d>`` then comma- or whitespace-separated rows.

    Steps are returned in metres.
    """
    path = Path(path)
    lines = _read_lines(path)
    match = _SCAN_HEADER.match(lines[0]) if lines else None
    if not match:
        raise ParseError(path, 1, "'# x_step_um=<decimal> y_step_um=<decimal>'")
    try:
        x_step, y_step = float(match.group(1)) * 1e-6, float(match.group(2)) * 1e-6
    except ValueError:
        raise ParseError(path, 1, "decimal scan steps") from None
    body = pd.Series(lines[1:], dtype=object).str.strip()
    if body.empty:
        raise ParseError(path, 2, "at least one row of scan values")
    fields = body.str.split(r"[,\s]+", regex=True)
    lengths = fields.str.len().to_numpy()
    values = pd.to_numeric(fields.explode(), errors="coerce")
    numeric = values.notna().groupby(level=0).all().to_numpy(dtype=bool)
    blank = body.eq("").to_numpy()
    ragged = lengths != lengths[0]
    problems = np.flatnonzero(blank | ~numeric | ragged)
    if problems.size:
        index = int(problems[0])
        if blank[index]:
            expected = "a row of scan values"
        elif not numeric[index]:
            expected = "numeric scan values"
        else:
            expected = f"{lengths[0]} values per row"
        raise ParseError(path, index + 2, expected)
    grid = values.to_numpy(dtype=float).reshape(len(body), int(lengths[0]))
    try:
        return ScanGrid(grid, x_step, y_step)
    except InvalidArgumentError as exc:
        raise ParseError(path, 2, str(exc)) from exc


# --- TOML: constants and scenarios ---------------------------------------


def _read_toml(path: Path) -> dict:
    try:
        with open(path, "rb") as handle:
            return tomllib.load(handle)
    except FileNotFoundError:
        raise ParseError(path, 0, "an existing file") from None
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None) or _toml_error_line(str(exc))
        raise ParseError(path, line, f"valid TOML ({exc})") from exc


def _toml_error_line(message: str) -> int:
    match = re.search(r"line (\d+)", message)
    return int(match.group(1)) if match else 0


def _validate(model, data: dict, path: Path):
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "document"
        raise ParseError(path, _key_line(path, first["loc"]), f"{where}: {first['msg']}") from exc


def _key_line(path: Path, loc: tuple) -> int:
    """Line of the first key in ``loc`` that appears in the file, else 0."""
    keys = [str(k) for k in loc if isinstance(k, str)]
    for key in reversed(keys):
        pattern = re.compile(rf"^\s*(\[+\s*)?{re.escape(key)}\b")
        for number, line in enumerate(_read_lines(path), start=1):
            if pattern.match(line):
                return number
    return 0


def load_constants(path: str | Path) -> CalibrationConstants:
    path = Path(path)
    constants = _validate(CalibrationConstants, _read_toml(path), path)
    logger.info(f"loaded calibration constants {constants.version!r} from {path}")
    return constants


def builtin_constants(name: str) -> Path:
    """Path of a shipped constants file, e.g. ``'fiber_851'``."""
    root = resources.files("spd_calibration") / "data" / "constants"
    candidate = root / f"{name}.toml"
    if not candidate.is_file():
        known = sorted(p.name.removesuffix(".toml") for p in root.iterdir() if p.name.endswith(".toml"))
        raise InvalidArgumentError(f"no shipped constants {name!r}; known: {known}")
    return Path(str(candidate))


def resolve_constants(reference: str, base_dir: Path) -> Path:
    """A constants reference is a path relative to ``base_dir`` or a shipped name."""
    path = Path(reference)
    if not path.is_absolute():
        path = base_dir / path
    if path.is_file():
        return path
    return builtin_constants(Path(reference).stem)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    data = _read_toml(path)
    scenario = _validate(Scenario, data, path)
    scenario.base_dir = path.parent
    return scenario


def load_simulation_scenario(path: str | Path) -> CampaignScenario | TimetagScenario | PowerScenario:
    """Dispatch on the top-level ``kind`` key: campaign (default), timetag or power."""
    path = Path(path)
    data = _read_toml(path)
    models = {"campaign": CampaignScenario, "timetag": TimetagScenario, "power": PowerScenario}
    kind = data.get("kind", "campaign")
    if kind not in models:
        raise ParseError(path, _key_line(path, ("kind",)), f"kind one of {sorted(models)}")
    return _validate(models[kind], data, path)


def write_scenario(
    scenario: Scenario | CampaignScenario | TimetagScenario | PowerScenario, path: str | Path
) -> Path:
    """TOML for an analysis or simulation scenario; unset optional keys are left out."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        tomli_w.dump(scenario.model_dump(exclude_none=True), handle)
    return path


def write_campaign(campaign, constants_path: Path, out_dir: str | Path) -> list[Path]:
    """Counts, monitor and reference logs, a constants copy and the analysis scenario."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    constants_copy = out_dir / "constants.toml"
    constants_copy.write_bytes(Path(constants_path).read_bytes())
    written = [
        constants_copy,
        write_counts_csv(campaign.counts, out_dir / "counts.csv"),
        write_power_csv(campaign.monitor, out_dir / "monitor.csv", "W"),
        write_power_csv(campaign.reference, out_dir / "reference.csv", campaign.reference_unit),
        write_scenario(campaign.analysis_scenario(constants_copy.name), out_dir / "scenario.toml"),
    ]
    logger.info(f"wrote campaign {campaign.scenario.name!r} to {out_dir}")
    return written
