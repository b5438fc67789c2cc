"""Contiguity matrices and spatially lagged shock regressors.

W is binary (1 when two counties share a border) and is not row-normalised
unless asked. The second-order matrix marks pairs of distinct counties that
share at least one neighbour.
"""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .errors import InputError
from .panel import PanelDataset, shift


@dataclass(frozen=True)
class AdjacencyMatrix:
    counties: tuple[str, ...]
    matrix: sparse.csr_matrix

    def __post_init__(self):
        m = sparse.csr_matrix(self.matrix, dtype=float)
        n = len(self.counties)
        if m.shape != (n, n):
            raise InputError(f"adjacency shape {m.shape} does not match {n} counties")
        m.sort_indices()
        object.__setattr__(self, "counties", tuple(self.counties))
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return len(self.counties)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def neighbors(self, county: str) -> list[str]:
        i = self.counties.index(county)
        row = self.matrix.getrow(i)
        return [self.counties[j] for j in row.indices]

    def row_normalized(self) -> "AdjacencyMatrix":
        deg = np.asarray(self.matrix.sum(axis=1)).ravel()
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        return AdjacencyMatrix(self.counties, sparse.diags(inv) @ self.matrix)


def read_edge_list(source) -> list[tuple[str, str]]:
    """Parse ``id_a,id_b`` lines; ``#`` starts a comment."""
    if isinstance(source, (str, os.PathLike)):
        try:
            with open(source) as fh:
                text = fh.read()
        except OSError as exc:
            raise InputError(f"cannot read {os.fspath(source)}: {exc.strerror}") from None
    else:
        text = source.read()
    edges = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2 or not all(parts):
            raise InputError(f"edge list line {lineno}: expected 'id_a,id_b'")
        edges.append((parts[0], parts[1]))
    return edges


def load_adjacency(edges: Iterable[tuple[str, str]], counties: Sequence[str]) -> AdjacencyMatrix:
    """Symmetric 0/1 contiguity matrix over ``counties`` from an edge list.

    Duplicates and reversed pairs collapse; self-edges are dropped with a
    warning; ids outside ``counties`` are an error.
    """
    index = {c: i for i, c in enumerate(counties)}
    rows, cols = [], []
    n_self = 0
    for a, b in edges:
        for cid in (a, b):
            if cid not in index:
                raise InputError(f"edge references unknown county {cid!r}")
        if a == b:
            n_self += 1
            continue
        rows += [index[a], index[b]]
        cols += [index[b], index[a]]
    if n_self:
        warnings.warn(f"{n_self} self-edges ignored", RuntimeWarning, stacklevel=2)
    n = len(index)
    m = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    m.data[:] = 1.0  # duplicates were summed
    return AdjacencyMatrix(tuple(counties), m)


def second_order(w: AdjacencyMatrix) -> AdjacencyMatrix:
    """Binary W x W with the diagonal removed."""
    m = (w.matrix @ w.matrix).tocsr()
    m = (m - sparse.diags(m.diagonal())).tocsr()
    m.eliminate_zeros()
    m.data[:] = 1.0
    return AdjacencyMatrix(w.counties, m)


def spatial_lag(w: AdjacencyMatrix, values: np.ndarray) -> np.ndarray:
    """``(W D)[c, t] = sum_j W[c, j] D[j, t]``.

    A cell is missing when any neighbour's value is missing at that period.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] != w.n:
        raise InputError(f"series has {values.shape[0]} counties, adjacency has {w.n}")
    miss = np.isnan(values)
    out = np.asarray(w.matrix @ np.where(miss, 0.0, values))
    if miss.any():
        touched = np.asarray(w.matrix @ miss.astype(float)) > 0
        out[touched] = np.nan
    return out


def spatial_regressors(panel: PanelDataset, w: AdjacencyMatrix, w2: AdjacencyMatrix | None,
                       shock: str, lags: int) -> dict[str, np.ndarray]:
    """Spatially lagged shock series and their temporal lags.

    Names: ``W_<shock>``, ``W2_<shock>`` for the contemporaneous terms and
    ``W_<shock>_lag<j>`` / ``W2_<shock>_lag<j>`` for j = 1..lags.
    """
    if w.counties != panel.counties:
        raise InputError("adjacency county order differs from the panel")
    if w2 is not None and w2.counties != panel.counties:
        raise InputError("second-order adjacency county order differs from the panel")
    d = panel[shock]
    out = {}
    mats = [("W", w)] + ([("W2", w2)] if w2 is not None else [])
    for prefix, m in mats:
        base = spatial_lag(m, d)
        out[f"{prefix}_{shock}"] = base
        for j in range(1, lags + 1):
            out[f"{prefix}_{shock}_lag{j}"] = shift(base, j)
    return out
