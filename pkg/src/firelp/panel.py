"""County-by-period panel storage, text ingestion and series transforms.

Every series is held as a dense ``(n_counties, n_periods)`` float array in
which ``NaN`` marks a missing cell. Periods are integer ordinals (months or
years since year 0) so that lag arithmetic is plain integer subtraction;
calendar strings only appear at the text boundary.
"""
from __future__ import annotations

import csv
import io
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import IO, Mapping, Sequence

import numpy as np

from .errors import InputError

MONTHLY = "monthly"
ANNUAL = "annual"
FREQUENCIES = (MONTHLY, ANNUAL)


def parse_period(text: str, frequency: str | None = None) -> tuple[int, str]:
    """Parse ``YYYY-MM`` (monthly) or ``YYYY`` (annual) into an ordinal.

    Returns the ordinal and the frequency implied by the text. If
    ``frequency`` is given and disagrees with the text, ``InputError``.
    """
    s = text.strip()
    try:
        if len(s) == 7 and s[4] == "-":
            year, month = int(s[:4]), int(s[5:])
            if not 1 <= month <= 12:
                raise ValueError(s)
            ordinal, freq = year * 12 + month - 1, MONTHLY
        elif len(s) == 4 and s.isdigit():
            ordinal, freq = int(s), ANNUAL
        else:
            raise ValueError(s)
    except ValueError:
        raise InputError(f"unparseable period {text!r}") from None
    if frequency is not None and freq != frequency:
        raise InputError(f"period {text!r} is not {frequency}")
    return ordinal, freq


def format_period(ordinal: int, frequency: str) -> str:
    if frequency == MONTHLY:
        year, month0 = divmod(int(ordinal), 12)
        return f"{year:04d}-{month0 + 1:02d}"
    return f"{int(ordinal):04d}"


def format_float(x: float) -> str:
    """Shortest text that reads back to the same double; empty for missing."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    text = repr(float(x))
    return text[:-2] if text.endswith(".0") else text


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PanelDataset:
    """Immutable rectangular county x period store.

    Attributes
    ----------
    counties : tuple of str
        County identifiers, in row order.
    periods : ndarray of int
        Consecutive period ordinals, in column order.
    frequency : {"monthly", "annual"}
    series : mapping of name -> (N, T) float array, NaN = missing
    attributes : mapping of name -> (N,) array of static county values
    """

    counties: tuple[str, ...]
    periods: np.ndarray
    frequency: str = MONTHLY
    series: Mapping[str, np.ndarray] = field(default_factory=dict)
    attributes: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        counties = tuple(str(c) for c in self.counties)
        if any(not c for c in counties):
            raise InputError("empty county identifier")
        if len(set(counties)) != len(counties):
            raise InputError("duplicate county identifiers")
        if self.frequency not in FREQUENCIES:
            raise InputError(f"unknown frequency {self.frequency!r}")
        periods = np.asarray(self.periods, dtype=np.int64)
        if periods.ndim != 1 or (periods.size > 1 and np.any(np.diff(periods) != 1)):
            raise InputError("periods must be consecutive integers")
        shape = (len(counties), periods.size)
        series = {}
        for name, values in self.series.items():
            arr = np.asarray(values, dtype=float)
            if arr.shape != shape:
                raise InputError(f"series {name!r} has shape {arr.shape}, expected {shape}")
            series[name] = _readonly(arr)
        attributes = {}
        for name, values in self.attributes.items():
            arr = np.asarray(values)
            if arr.shape != (shape[0],):
                raise InputError(f"attribute {name!r} has shape {arr.shape}, expected {(shape[0],)}")
            if name == "population" and arr.dtype.kind in "fi":
                ok = np.isnan(arr) | (arr > 0) if arr.dtype.kind == "f" else arr > 0
                if not np.all(ok):
                    raise InputError("population attribute must be positive")
            attributes[name] = _readonly(arr)
        object.__setattr__(self, "counties", counties)
        object.__setattr__(self, "periods", _readonly(periods))
        object.__setattr__(self, "series", series)
        object.__setattr__(self, "attributes", attributes)

    @property
    def n_counties(self) -> int:
        return len(self.counties)

    @property
    def n_periods(self) -> int:
        return int(self.periods.size)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_counties, self.n_periods

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.series[name]
        except KeyError:
            raise InputError(f"unknown series {name!r}") from None

    def attribute(self, name: str) -> np.ndarray:
        try:
            return self.attributes[name]
        except KeyError:
            raise InputError(f"unknown attribute {name!r}") from None

    def missing(self, name: str) -> np.ndarray:
        return np.isnan(self[name])

    def county_index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.counties)}

    def with_series(self, **arrays: np.ndarray) -> "PanelDataset":
        return PanelDataset(self.counties, self.periods, self.frequency,
                            {**self.series, **arrays}, self.attributes)

    def with_attributes(self, **arrays) -> "PanelDataset":
        return PanelDataset(self.counties, self.periods, self.frequency,
                            self.series, {**self.attributes, **arrays})

    def subset_counties(self, index: Sequence[int]) -> "PanelDataset":
        idx = np.asarray(index, dtype=np.int64)
        return PanelDataset(
            tuple(self.counties[i] for i in idx), self.periods, self.frequency,
            {k: v[idx] for k, v in self.series.items()},
            {k: v[idx] for k, v in self.attributes.items()},
        )


@dataclass(frozen=True)
class PanelSchema:
    """Column mapping for :func:`load_panel`.

    ``values`` maps series name -> column name; ``None`` takes every column
    other than the county and period columns under its own name. ``scale``
    multiplies a series at ingestion (e.g. ``1e-6`` for m^2 -> km^2).
    """

    county: str = "county"
    period: str = "period"
    values: Mapping[str, str] | None = None
    scale: Mapping[str, float] = field(default_factory=dict)
    frequency: str | None = None
    nonnegative: tuple[str, ...] = ("burn",)


def _open_text(source) -> tuple[IO[str], bool]:
    if isinstance(source, (str, os.PathLike)):
        try:
            return open(source, newline=""), True
        except OSError as exc:
            raise InputError(f"cannot read {os.fspath(source)}: {exc.strerror}") from None
    return source, False


def load_panel(source, schema: PanelSchema | None = None) -> PanelDataset:
    """Read a long-format delimited text panel.

    One row per (county, period); cells absent from the file become missing.
    Duplicate keys, non-numeric cells and empty input are rejected with the
    offending line number.
    """
    schema = schema or PanelSchema()
    fh, close = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError("empty panel input") from None
        cols = {name: j for j, name in enumerate(header)}
        for required in (schema.county, schema.period):
            if required not in cols:
                raise InputError(f"panel header lacks column {required!r}")
        if schema.values is None:
            value_map = {h: h for h in header if h not in (schema.county, schema.period)}
        else:
            value_map = dict(schema.values)
        if not value_map:
            raise InputError("schema names no value columns")
        for col in value_map.values():
            if col not in cols:
                raise InputError(f"panel header lacks column {col!r}")
        names = list(value_map)
        jcounty, jperiod = cols[schema.county], cols[schema.period]
        jvalues = [cols[value_map[n]] for n in names]

        frequency = schema.frequency
        keys: dict[tuple[str, int], int] = {}
        county_order: dict[str, int] = {}
        rows_c, rows_p, rows_v = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise InputError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            county = row[jcounty].strip()
            if not county:
                raise InputError(f"line {lineno}: empty county id")
            period, freq = parse_period(row[jperiod], frequency)
            frequency = freq
            key = (county, period)
            if key in keys:
                raise InputError(
                    f"line {lineno}: duplicate key ({county}, {row[jperiod].strip()}), "
                    f"first seen on line {keys[key]}")
            keys[key] = lineno
            county_order.setdefault(county, len(county_order))
            vals = []
            for name, j in zip(names, jvalues):
                cell = row[j].strip()
                if cell == "" or cell.upper() in ("NA", "NAN"):
                    vals.append(math.nan)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise InputError(
                        f"line {lineno}: non-numeric value {cell!r} in column {value_map[name]!r}"
                    ) from None
                v *= schema.scale.get(name, 1.0)
                if name in schema.nonnegative and v < 0:
                    raise InputError(f"line {lineno}: negative value in {name!r}")
                vals.append(v)
            rows_c.append(county_order[county])
            rows_p.append(period)
            rows_v.append(vals)
    finally:
        if close:
            fh.close()
    if not rows_c:
        raise InputError("empty panel input")

    rows_p = np.asarray(rows_p, dtype=np.int64)
    p0, p1 = int(rows_p.min()), int(rows_p.max())
    periods = np.arange(p0, p1 + 1)
    counties = tuple(county_order)
    values = np.asarray(rows_v, dtype=float)
    series = {}
    ci = np.asarray(rows_c)
    ti = rows_p - p0
    for k, name in enumerate(names):
        arr = np.full((len(counties), periods.size), np.nan)
        arr[ci, ti] = values[:, k]
        series[name] = arr
    return PanelDataset(counties, periods, frequency, series)


def load_attributes(source, panel: PanelDataset, key: str = "county") -> PanelDataset:
    """Attach static per-county attributes from a keyed delimited file.

    Columns whose every non-empty cell parses as a number become float
    attributes; anything else (e.g. region tags) is kept as strings.
    Counties absent from the file get NaN / empty string. Rows naming
    counties outside the panel are ignored.
    """
    fh, close = _open_text(source)
    try:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or key not in reader.fieldnames:
            raise InputError(f"attribute file lacks key column {key!r}")
        rows = list(reader)
    finally:
        if close:
            fh.close()
    index = panel.county_index()
    names = [f for f in reader.fieldnames if f != key]
    raw = {n: [""] * panel.n_counties for n in names}
    seen = set()
    for lineno, row in enumerate(rows, start=2):
        cid = (row[key] or "").strip()
        if cid in seen:
            raise InputError(f"line {lineno}: duplicate attribute row for county {cid!r}")
        seen.add(cid)
        i = index.get(cid)
        if i is None:
            continue
        for n in names:
            raw[n][i] = (row[n] or "").strip()
    attrs = {}
    for n, cells in raw.items():
        try:
            attrs[n] = np.array([float(c) if c else math.nan for c in cells])
        except ValueError:
            attrs[n] = np.array(cells, dtype=object)
    return panel.with_attributes(**attrs)


def write_panel(panel: PanelDataset, dest, series: Sequence[str] | None = None) -> None:
    """Write the long-format text panel; inverse of :func:`load_panel`.

    Rows where every written series is missing are omitted.
    """
    names = list(series) if series is not None else list(panel.series)
    arrays = [panel[n] for n in names]
    periods = [format_period(p, panel.frequency) for p in panel.periods]
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["county", "period", *names])
    for i, cid in enumerate(panel.counties):
        for t, ptxt in enumerate(periods):
            vals = [a[i, t] for a in arrays]
            if all(math.isnan(v) for v in vals):
                continue
            w.writerow([cid, ptxt, *(format_float(v) for v in vals)])
    _emit(dest, out.getvalue())


def write_attributes(panel: PanelDataset, dest, names: Sequence[str] | None = None) -> None:
    names = list(names) if names is not None else list(panel.attributes)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["county", *names])
    for i, cid in enumerate(panel.counties):
        cells = []
        for n in names:
            v = panel.attributes[n][i]
            cells.append(format_float(v) if isinstance(v, (float, np.floating, int, np.integer)) else str(v))
        w.writerow([cid, *cells])
    _emit(dest, out.getvalue())


def _emit(dest, text: str) -> None:
    if isinstance(dest, (str, os.PathLike)):
        atomic_write(dest, text)
    else:
        dest.write(text)


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


# --- transforms -----------------------------------------------------------

def shift(values: np.ndarray, k: int) -> np.ndarray:
    """Shift along the period axis: ``out[:, t] = values[:, t - k]``.

    Positive ``k`` is a lag, negative a lead. Cells shifted in from outside
    the period range are NaN. Rows (counties) never mix.
    """
    values = np.asarray(values, dtype=float)
    out = np.full_like(values, np.nan)
    T = values.shape[-1]
    if k == 0:
        out[...] = values
    elif 0 < k < T:
        out[..., k:] = values[..., :T - k]
    elif -T < k < 0:
        out[..., :T + k] = values[..., -k:]
    return out


def safe_log(values: np.ndarray, name: str = "series") -> np.ndarray:
    """Natural log with non-positive cells masked and counted in a warning."""
    values = np.asarray(values, dtype=float)
    bad = values <= 0
    n_bad = int(np.count_nonzero(bad))
    if n_bad:
        warnings.warn(f"{n_bad} non-positive cells in {name!r} masked under log",
                      RuntimeWarning, stacklevel=3)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(np.where(bad, np.nan, values))
    return out


def log_growth(panel: PanelDataset, series: str, h: int) -> np.ndarray:
    """``ln x[t+h] - ln x[t-1]``, missing where either endpoint is."""
    if h < 0:
        raise InputError("log_growth horizon must be >= 0")
    logx = safe_log(panel[series], series)
    return shift(logx, -h) - shift(logx, 1)


def level_change(panel: PanelDataset, series: str, h: int) -> np.ndarray:
    """``x[t+h] - x[t-1]`` for outcomes already in rate units."""
    if h < 0:
        raise InputError("horizon must be >= 0")
    x = panel[series]
    return shift(x, -h) - shift(x, 1)


def lag_name(series: str, j: int) -> str:
    return f"{series}_lag{j}"


def make_lags(panel: PanelDataset, series: str, k: int) -> dict[str, np.ndarray]:
    """Lags 1..k of ``series`` as new named arrays."""
    if k < 1:
        raise InputError("lag count must be >= 1; use the base series for lag 0")
    if k > panel.n_periods - 1:
        raise InputError(f"lag count {k} exceeds T-1 = {panel.n_periods - 1}")
    base = panel[series]
    return {lag_name(series, j): shift(base, j) for j in range(1, k + 1)}


def seasonal_adjust(panel: PanelDataset, series: str, min_obs: int = 24) -> np.ndarray:
    """Remove county-specific multiplicative month-of-year factors.

    For each county the factor for calendar month m is the geometric mean of
    the series in month m relative to the average over the twelve monthly
    geometric means, so the factors have geometric mean one. Counties with
    fewer than ``min_obs`` observations pass through unchanged (warned).
    """
    if panel.frequency != MONTHLY:
        raise InputError("seasonal adjustment requires monthly data")
    x = panel[series]
    if np.any(x[~np.isnan(x)] <= 0):
        raise InputError(f"seasonal adjustment requires {series!r} strictly positive")
    logx = np.log(x)
    month = np.mod(panel.periods, 12)
    out = x.copy()
    skipped = 0
    for i in range(panel.n_counties):
        row = logx[i]
        ok = ~np.isnan(row)
        if np.count_nonzero(ok) < min_obs:
            skipped += 1
            continue
        means = np.full(12, np.nan)
        for m in range(12):
            sel = ok & (month == m)
            if sel.any():
                means[m] = row[sel].mean()
        if np.isnan(means).any():
            skipped += 1
            continue
        factor = means - means.mean()
        out[i] = np.exp(row - factor[month])
    if skipped:
        warnings.warn(f"{skipped} counties left unadjusted (fewer than {min_obs} observations "
                      "or incomplete month coverage)", RuntimeWarning, stacklevel=2)
    return out


@dataclass(frozen=True)
class SeriesRef:
    """A named series with a transform: level, log, log_growth(k), lag(k), lead(k)."""

    name: str
    transform: str = "level"
    k: int = 0

    def evaluate(self, panel: PanelDataset) -> np.ndarray:
        if self.transform == "level":
            return np.asarray(panel[self.name], dtype=float)
        if self.transform == "log":
            return safe_log(panel[self.name], self.name)
        if self.transform == "log_growth":
            return log_growth(panel, self.name, self.k)
        if self.transform == "lag":
            return shift(panel[self.name], self.k)
        if self.transform == "lead":
            return shift(panel[self.name], -self.k)
        raise InputError(f"unknown transform {self.transform!r}")

    @property
    def label(self) -> str:
        if self.transform == "level":
            return self.name
        if self.transform == "log":
            return f"log_{self.name}"
        return f"{self.name}_{self.transform}{self.k}"


def burn_summary(panel: PanelDataset, series: str = "burn") -> dict[str, float]:
    """Unconditional and conditional burn means.

    ``mean_given_burn`` conditions on county-periods with positive burn;
    ``mean_given_ever_burned`` on all periods of counties that ever burn.
    """
    d = panel[series]
    ok = ~np.isnan(d)
    vals = d[ok]
    pos = vals[vals > 0]
    ever = np.nanmax(np.where(ok, d, 0.0), axis=1) > 0
    ever_vals = d[ever][~np.isnan(d[ever])]
    return {
        "mean": float(vals.mean()) if vals.size else math.nan,
        "mean_given_burn": float(pos.mean()) if pos.size else 0.0,
        "mean_given_ever_burned": float(ever_vals.mean()) if ever_vals.size else 0.0,
        "fire_frequency": float(pos.size / vals.size) if vals.size else math.nan,
        "obs": int(vals.size),
    }
