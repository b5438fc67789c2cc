"""Model specifications and per-horizon regression designs.

A :class:`ModelSpec` declares the outcome, the shock, lag structure,
controls, optional state dependence, sample filters and spatial terms.
:class:`DesignBuilder` evaluates every regressor once on the county x period
grid and then cuts a :class:`HorizonDesign` for each horizon by choosing the
rows where the horizon-h response and all regressors are observed.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import EstimationError, InputError
from .panel import ANNUAL, PanelDataset, level_change, safe_log, shift
from .spatial import AdjacencyMatrix, second_order, spatial_regressors

FE_CHOICES = ("county", "period")


@dataclass(frozen=True)
class StateRule:
    """Binary state for state-dependent responses.

    ``county_percentile`` compares each value with the p-th percentile of
    that county's own history; ``sample_percentile`` with one pooled
    threshold. ``positive_only`` computes the threshold over positive values
    only (used for fire-size states).
    """

    series: str
    kind: str = "county_percentile"
    p: float = 70.0
    positive_only: bool = False

    def __post_init__(self):
        if self.kind not in ("county_percentile", "sample_percentile"):
            raise InputError(f"unknown state rule kind {self.kind!r}")
        if not 0 < self.p < 100:
            raise InputError("state percentile must lie in (0, 100)")


@dataclass(frozen=True)
class SampleFilter:
    """One sample restriction; a spec's filters compose by intersection.

    kinds: ``all``, ``above_median`` / ``below_median`` (of county attribute
    ``attribute``), ``region`` (``attribute`` equals ``value``),
    ``clean_control`` (treated rows plus controls with no shock within
    ``window`` periods).
    """

    kind: str = "all"
    attribute: str | None = None
    value: str | None = None
    window: int = 36
    treated_threshold: float = 0.0

    def __post_init__(self):
        if self.kind not in ("all", "above_median", "below_median", "region", "clean_control"):
            raise InputError(f"unknown sample filter {self.kind!r}")
        if self.kind in ("above_median", "below_median") and not self.attribute:
            raise InputError(f"{self.kind} filter needs an attribute")
        if self.kind == "region" and self.value is None:
            raise InputError("region filter needs a value")
        if self.kind == "clean_control" and self.window < 1:
            raise InputError("clean-control window must be >= 1")

    @property
    def label(self) -> str:
        if self.kind in ("above_median", "below_median"):
            return f"{self.kind}({self.attribute})"
        if self.kind == "region":
            return f"region({self.attribute or 'region'}={self.value})"
        if self.kind == "clean_control":
            return f"clean_control({self.window})"
        return "all"


@dataclass(frozen=True)
class SpatialRule:
    w: AdjacencyMatrix
    lags: int | None = None
    second_order: bool = True
    row_normalize: bool = False


@dataclass(frozen=True)
class Control:
    """Extra control: a series at t plus ``lags`` of its temporal lags."""

    series: str
    lags: int = 0
    log: bool = False


@dataclass(frozen=True)
class ModelSpec:
    """Declarative local-projection specification.

    ``outcome_transform="log"`` gives the response ln y[t+h] - ln y[t-1];
    ``"level"`` gives y[t+h] - y[t-1] for outcomes already in rate units.
    Outcome lags enter as one-period changes of the transformed outcome
    (``outcome_lag_form="growth"``) or as its lagged levels (``"level"``).
    Lag counts default to 24 for monthly and 2 for annual panels.
    """

    outcome: str
    shock: str
    horizons: int = 36
    outcome_transform: str = "log"
    outcome_lags: int | None = None
    shock_lags: int | None = None
    outcome_lag_form: str = "growth"
    controls: tuple[Control, ...] = ()
    fe: tuple[str, ...] = FE_CHOICES
    state: StateRule | None = None
    sample: tuple[SampleFilter, ...] = ()
    spatial: SpatialRule | None = None

    def __post_init__(self):
        if self.horizons < 0:
            raise InputError("horizons must be >= 0")
        if self.outcome_transform not in ("log", "level"):
            raise InputError(f"unknown outcome transform {self.outcome_transform!r}")
        if self.outcome_lag_form not in ("growth", "level"):
            raise InputError(f"unknown outcome lag form {self.outcome_lag_form!r}")
        for k in (self.outcome_lags, self.shock_lags):
            if k is not None and k < 0:
                raise InputError("lag counts must be >= 0")
        if any(f not in FE_CHOICES for f in self.fe):
            raise InputError(f"fixed effects must be drawn from {FE_CHOICES}")
        object.__setattr__(self, "controls", tuple(self.controls))
        object.__setattr__(self, "sample", tuple(self.sample))
        object.__setattr__(self, "fe", tuple(self.fe))

    def lag_counts(self, frequency: str) -> tuple[int, int]:
        default = 2 if frequency == ANNUAL else 24
        return (default if self.outcome_lags is None else self.outcome_lags,
                default if self.shock_lags is None else self.shock_lags)

    def with_filter(self, flt: SampleFilter) -> "ModelSpec":
        return replace(self, sample=self.sample + (flt,))


@dataclass(frozen=True)
class HorizonDesign:
    """Materialised regression for one horizon.

    ``X`` columns are ordered key regressors first (shock or its state
    interactions, then contemporaneous spatial terms) followed by controls.
    ``county`` / ``period`` hold panel row/column indices of each design row.
    """

    h: int
    y: np.ndarray
    X: np.ndarray
    columns: tuple[str, ...]
    county: np.ndarray
    period: np.ndarray
    n_key: int = 1
    fe: tuple[str, ...] = FE_CHOICES
    notes: Mapping[str, int] = field(default_factory=dict)

    @property
    def n_obs(self) -> int:
        return int(self.y.size)

    @property
    def key_columns(self) -> tuple[str, ...]:
        return self.columns[:self.n_key]

    def fe_labels(self) -> list[np.ndarray]:
        labels = []
        if "county" in self.fe:
            labels.append(self.county)
        if "period" in self.fe:
            labels.append(self.period)
        return labels

    def subset(self, rows: np.ndarray) -> "HorizonDesign":
        return replace(self, y=self.y[rows], X=self.X[rows], county=self.county[rows],
                       period=self.period[rows])

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.columns.index(name)]


# --- building blocks ------------------------------------------------------

def state_indicator(panel: PanelDataset, rule: StateRule) -> np.ndarray:
    """0/1 indicator (NaN where the series is missing).

    1 iff the value strictly exceeds the threshold; thresholds use linear
    interpolation between order statistics.
    """
    x = np.asarray(panel[rule.series], dtype=float)
    basis = np.where(x > 0, x, np.nan) if rule.positive_only else x
    out = np.full_like(x, np.nan)
    ok = ~np.isnan(x)
    if rule.kind == "sample_percentile":
        vals = basis[~np.isnan(basis)]
        if vals.size == 0:
            return out
        thr = np.percentile(vals, rule.p)
        out[ok] = (x[ok] > thr).astype(float)
        return out
    for i in range(x.shape[0]):
        vals = basis[i][~np.isnan(basis[i])]
        if vals.size == 0:
            continue
        thr = np.percentile(vals, rule.p)
        out[i, ok[i]] = (x[i, ok[i]] > thr).astype(float)
    return out


def interact_state(design: HorizonDesign, indicator: np.ndarray) -> HorizonDesign:
    """Replace the shock column by ``I*D`` and ``(1-I)*D``.

    ``indicator`` is the (N, T) state grid. Rows whose indicator is missing
    are dropped and counted in ``notes['state_missing']``.
    """
    ind = np.asarray(indicator, dtype=float)[design.county, design.period]
    keep = ~np.isnan(ind)
    d = design if keep.all() else design.subset(np.flatnonzero(keep))
    ind = ind[keep]
    shock = d.X[:, 0]
    high = ind * shock
    low = (1.0 - ind) * shock
    name = d.columns[0]
    X = np.column_stack([high, low, d.X[:, 1:]])
    columns = (f"{name}_high", f"{name}_low") + d.columns[1:]
    notes = {**d.notes, "state_missing": int(np.count_nonzero(~keep))}
    return replace(d, X=X, columns=columns, n_key=d.n_key + 1, notes=notes)


def clean_control_mask(panel: PanelDataset, shock: str, window: int,
                       treated_threshold: float = 0.0) -> np.ndarray:
    """Rows kept under the clean-control design.

    (c, t) is kept if it is treated (shock > threshold) or if the shock is
    zero at every period in [t - window, t + window]. Missing shock values
    count as possible fires, so they disqualify controls.
    """
    if window < 1:
        raise InputError("clean-control window must be >= 1")
    d = np.asarray(panel[shock], dtype=float)
    miss = np.isnan(d)
    if miss.any():
        warnings.warn(f"{int(miss.sum())} missing {shock!r} cells excluded from clean-control sample",
                      RuntimeWarning, stacklevel=2)
    dirty = (miss | (d > 0)).astype(np.int64)
    T = d.shape[1]
    cs = np.concatenate([np.zeros((d.shape[0], 1), np.int64), np.cumsum(dirty, axis=1)], axis=1)
    t = np.arange(T)
    hi = np.minimum(T, t + window + 1)
    lo = np.maximum(0, t - window)
    window_count = cs[:, hi] - cs[:, lo]
    treated = ~miss & (d > treated_threshold)
    return treated | (window_count == 0)


def herfindahl(shares: Sequence[float]) -> float:
    """Sum of squared employment shares, renormalised if they do not sum to 1."""
    s = np.asarray(shares, dtype=float)
    if s.size == 0:
        raise InputError("herfindahl needs at least one share")
    if np.any(s < 0):
        raise InputError("shares must be non-negative")
    total = s.sum()
    if total == 0:
        raise InputError("all shares are zero")
    if abs(total - 1.0) > 1e-9:
        warnings.warn(f"shares sum to {total:.12g}; renormalised", RuntimeWarning, stacklevel=2)
        s = s / total
    return float(np.sum(s * s))


def median_split(values: Mapping[str, float]) -> tuple[set[str], set[str]]:
    """Split counties at the median: strictly above vs. at-or-below.

    Missing values are left out of both groups.
    """
    items = {k: float(v) for k, v in values.items() if v is not None and not math.isnan(float(v))}
    if len(items) < 2:
        raise InputError("median split needs at least two non-missing values")
    med = float(np.median(list(items.values())))
    above = {k for k, v in items.items() if v > med}
    below = set(items) - above
    if not above:
        raise InputError("median split is degenerate: no value lies above the median")
    return above, below


def _attribute_mask(panel: PanelDataset, flt: SampleFilter) -> np.ndarray:
    if flt.kind in ("above_median", "below_median"):
        vals = panel.attribute(flt.attribute)
        above, below = median_split(dict(zip(panel.counties, vals.astype(float))))
        keep = above if flt.kind == "above_median" else below
        return np.array([c in keep for c in panel.counties])
    tags = panel.attribute(flt.attribute or "region")
    return np.array([str(v) == str(flt.value) for v in tags])


def sample_mask(panel: PanelDataset, spec: ModelSpec) -> tuple[np.ndarray, dict[str, int]]:
    """Intersection of the model's sample filters on the (N, T) grid."""
    mask = np.ones(panel.shape, dtype=bool)
    counts = {}
    for flt in spec.sample:
        if flt.kind == "all":
            continue
        if flt.kind == "clean_control":
            m = clean_control_mask(panel, spec.shock, flt.window, flt.treated_threshold)
        else:
            m = np.broadcast_to(_attribute_mask(panel, flt)[:, None], panel.shape)
        mask &= m
        counts[flt.label] = int(mask.sum())
        if not mask.any():
            raise EstimationError(f"sample is empty after filter {flt.label}")
    return mask, counts


# --- builder --------------------------------------------------------------

class DesignBuilder:
    """Evaluate the regressor grid once; cut horizon designs from it."""

    def __init__(self, panel: PanelDataset, spec: ModelSpec):
        for name in (spec.outcome, spec.shock):
            if name not in panel.series:
                raise InputError(f"series {name!r} not in panel")
        self.panel = panel
        self.spec = spec
        n_out, n_shock = spec.lag_counts(panel.frequency)
        T = panel.n_periods
        if max(n_out + (spec.outcome_lag_form == "growth"), n_shock) > T - 1:
            raise InputError(f"lag counts exceed available periods (T = {T})")

        y = panel[spec.outcome]
        self._ylev = safe_log(y, spec.outcome) if spec.outcome_transform == "log" else np.asarray(y, float)
        d = panel[spec.shock]

        key: list[tuple[str, np.ndarray]] = [(spec.shock, d)]
        controls: list[tuple[str, np.ndarray]] = []
        controls += [(f"{spec.shock}_lag{j}", shift(d, j)) for j in range(1, n_shock + 1)]
        if spec.outcome_lag_form == "growth":
            dy = self._ylev - shift(self._ylev, 1)
            controls += [(f"d_{spec.outcome}_lag{j}", shift(dy, j)) for j in range(1, n_out + 1)]
        else:
            controls += [(f"{spec.outcome}_lag{j}", shift(self._ylev, j)) for j in range(1, n_out + 1)]
        for c in spec.controls:
            base = safe_log(panel[c.series], c.series) if c.log else np.asarray(panel[c.series], float)
            label = f"log_{c.series}" if c.log else c.series
            controls.append((label, base))
            controls += [(f"{label}_lag{j}", shift(base, j)) for j in range(1, c.lags + 1)]
        if spec.spatial is not None:
            rule = spec.spatial
            w = rule.w.row_normalized() if rule.row_normalize else rule.w
            w2 = None
            if rule.second_order:
                w2 = second_order(rule.w)
                if rule.row_normalize:
                    w2 = w2.row_normalized()
            s_lags = n_shock if rule.lags is None else rule.lags
            sp = spatial_regressors(panel, w, w2, spec.shock, s_lags)
            contemporaneous = [f"W_{spec.shock}"] + ([f"W2_{spec.shock}"] if w2 is not None else [])
            key += [(n, sp[n]) for n in contemporaneous]
            controls += [(n, v) for n, v in sp.items() if n not in contemporaneous]

        if spec.spatial is not None:
            # spatial terms that are identically zero carry no information
            zero = {n for n, v in key[1:] + controls
                    if n.startswith(("W_", "W2_")) and np.all(np.nan_to_num(v) == 0)}
            key = [kv for kv in key if kv[0] not in zero]
            controls = [kv for kv in controls if kv[0] not in zero]
            self.dropped_columns = tuple(sorted(zero))
        else:
            self.dropped_columns = ()

        names = [n for n, _ in key + controls]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise InputError(f"duplicate regressor names: {sorted(dup)}")
        self.columns = tuple(names)
        self.n_key = len(key)
        N = panel.n_counties
        grid = np.empty((N * T, len(names)))
        for j, (_, arr) in enumerate(key + controls):
            grid[:, j] = np.asarray(arr, float).reshape(-1)
        self.grid = grid
        filt, self.filter_counts = sample_mask(panel, spec)
        self.base_valid = filt.reshape(-1) & ~np.isnan(grid).any(axis=1)
        self.indicator = state_indicator(panel, spec.state) if spec.state is not None else None
        self._rows_c = np.repeat(np.arange(N), T)
        self._rows_t = np.tile(np.arange(T), N)

    def response(self, h: int) -> np.ndarray:
        if self.spec.outcome_transform == "log":
            return shift(self._ylev, -h) - shift(self._ylev, 1)
        return level_change(self.panel, self.spec.outcome, h)

    def design(self, h: int) -> HorizonDesign:
        if h < 0:
            raise InputError("horizon must be >= 0")
        y = self.response(h).reshape(-1)
        valid = self.base_valid & ~np.isnan(y)
        rows = np.flatnonzero(valid)
        if rows.size == 0:
            raise EstimationError(f"empty design at horizon {h}")
        X = self.grid[rows]
        d = HorizonDesign(
            h=h, y=y[rows], X=X, columns=self.columns,
            county=self._rows_c[rows], period=self._rows_t[rows],
            n_key=self.n_key, fe=self.spec.fe,
            notes={"rows_dropped": int(valid.size - rows.size), **self.filter_counts},
        )
        if self.indicator is not None:
            d = interact_state(d, self.indicator)
        n_groups = sum(np.unique(lab).size for lab in d.fe_labels())
        if d.n_obs <= d.X.shape[1] + n_groups:
            raise EstimationError(
                f"horizon {h}: {d.n_obs} rows do not exceed {d.X.shape[1]} regressors "
                f"+ {n_groups} fixed-effect groups")
        return d


def build_design(panel: PanelDataset, spec: ModelSpec, h: int) -> HorizonDesign:
    return DesignBuilder(panel, spec).design(h)
