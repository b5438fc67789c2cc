"""Historical and projected employment impacts of burn sequences.

The impact in period t is the causal convolution of a per-unit response
kernel with the burn history, truncated after ``L`` periods:

    impact[t] = sum_{j=0..L} k[j] * D[t - j]

Burns before the first period count as zero. Regional series are
population-weighted means of county series.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError
from .irf import ImpulseResponse
from .panel import PanelDataset, atomic_write, format_float, format_period


def _kernel(irf, L: int) -> np.ndarray:
    if isinstance(irf, ImpulseResponse):
        kernel = irf.per_unit_kernel()
    else:
        kernel = np.asarray(irf, dtype=float).ravel()
    if L < 0:
        raise InputError("truncation length must be >= 0")
    if L > kernel.size - 1:
        raise InputError(f"truncation length {L} exceeds the response horizon {kernel.size - 1}")
    return kernel[:L + 1]


def county_hei(irf, burns, L: int = 36) -> np.ndarray:
    """Impact path (pp) of one or several burn sequences.

    Parameters
    ----------
    irf : ImpulseResponse or array_like
        An estimated response (its per-unit kernel is used) or a kernel in
        pp per shock unit, indexed by horizon.
    burns : array_like
        Burn sequence over periods; a 2-d array is treated row by row.
    L : int
        Last horizon of the kernel that contributes.
    """
    kernel = _kernel(irf, L)
    d = np.asarray(burns, dtype=float)
    if np.any(d < 0):
        raise InputError("burns must be non-negative")
    if np.isnan(d).any():
        raise InputError("burn sequence has missing values")
    T = d.shape[-1]
    out = np.zeros(d.shape)
    # j-ordered accumulation, the same summation order as a direct double loop
    for j in range(min(L + 1, T)):
        out[..., j:] += kernel[j] * d[..., :T - j]
    return out


def project_hei(irf, projected_burns, L: int = 36) -> np.ndarray:
    """Impact path of a hypothetical burn sequence."""
    return county_hei(irf, projected_burns, L)


@dataclass(frozen=True)
class RegionalHei:
    regions: tuple[str, ...]
    values: np.ndarray  # regions x periods
    weights: dict[str, np.ndarray]  # population shares of member counties
    members: dict[str, np.ndarray]  # row indices of member counties

    def __getitem__(self, region: str) -> np.ndarray:
        return self.values[self.regions.index(region)]


def regional_hei(impacts, populations, regions: Sequence[str]) -> RegionalHei:
    """Population-weighted mean of county impact paths within each region."""
    impacts = np.atleast_2d(np.asarray(impacts, dtype=float))
    pop = np.asarray(populations, dtype=float).ravel()
    regions = np.asarray(regions, dtype=object).ravel()
    if not impacts.shape[0] == pop.size == regions.size:
        raise InputError("impacts, populations and regions must have one entry per county")
    if np.any(pop < 0) or np.isnan(pop).any():
        raise InputError("populations must be non-negative numbers")
    names = tuple(sorted({str(r) for r in regions}))
    values = np.empty((len(names), impacts.shape[1]))
    weights, members = {}, {}
    for i, name in enumerate(names):
        rows = np.flatnonzero(regions == name)
        total = pop[rows].sum()
        if not total > 0:
            raise InputError(f"region {name!r} has zero total population")
        w = pop[rows] / total
        values[i] = w @ impacts[rows]
        weights[name] = w
        members[name] = rows
    return RegionalHei(names, values, weights, members)


def panel_hei(panel: PanelDataset, irf, shock: str = "burn", L: int = 36,
              population: str = "population", region: str = "region") -> tuple[np.ndarray, RegionalHei]:
    """County impacts for the panel's burn series and their regional means.

    Missing burns are treated as zero.
    """
    burns = np.nan_to_num(panel[shock], nan=0.0)
    impacts = county_hei(irf, burns, L)
    return impacts, regional_hei(impacts, panel.attribute(population), panel.attribute(region))


def write_hei(result: RegionalHei, periods, frequency: str, dest) -> None:
    """Write ``region,period,impact_pp`` rows, regions sorted then periods."""
    lines = ["region,period,impact_pp"]
    for i, name in enumerate(result.regions):
        for t, p in enumerate(periods):
            lines.append(f"{name},{format_period(int(p), frequency)},{format_float(result.values[i, t])}")
    atomic_write(dest, "\n".join(lines) + "\n")

