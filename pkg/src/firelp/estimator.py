"""Fixed-effect absorption, least squares and Driscoll-Kraay covariance."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg, sparse

from .design import HorizonDesign
from .errors import ConvergenceError, EstimationError

RANK_TOL = 1e-10
CHOLESKY_MIN_RATIO = 1e-3


@dataclass(frozen=True)
class Demeaned:
    values: np.ndarray
    iterations: int
    max_group_mean: float
    singletons: int


def _factorize(labels: np.ndarray) -> tuple[np.ndarray, int]:
    uniq, inv = np.unique(np.asarray(labels), return_inverse=True)
    return inv.ravel(), uniq.size


def _group_matrix(codes: np.ndarray, n_groups: int) -> tuple[sparse.csr_matrix, np.ndarray]:
    n = codes.size
    m = sparse.csr_matrix((np.ones(n), (codes, np.arange(n))), shape=(n_groups, n))
    counts = np.bincount(codes, minlength=n_groups).astype(float)
    return m, counts


def absorb(values: np.ndarray, labels: Sequence[np.ndarray], tol: float = 1e-10,
           max_iter: int = 10_000, overwrite: bool = False) -> Demeaned:
    """Sweep out group means for each label array (alternating projections).

    With no labels only the overall mean is removed (an intercept). One
    label, or two labels forming a complete rectangle, are solved in closed
    form. Otherwise the sweeps repeat until every group mean of every column
    is below ``tol`` times that column's largest absolute input value.
    ``overwrite=True`` lets a C-ordered float input be demeaned in place.
    """
    x = np.array(values, dtype=float, order="C", copy=not overwrite)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if not labels:
        x -= x.mean(axis=0)
        return Demeaned(x[:, 0] if squeeze else x, 0, 0.0, 0)
    factors = [_factorize(lab) for lab in labels]
    mats = [_group_matrix(codes, g) for codes, g in factors]
    singletons = int(sum(np.count_nonzero(c == 1) for _, c in mats))
    scale = np.abs(x).max(axis=0)
    scale[scale == 0] = 1.0

    def sweep(k):
        (codes, _), (m, counts) = factors[k], mats[k]
        means = (m @ x) / counts[:, None]
        x[...] -= means[codes]

    if len(factors) == 1:
        sweep(0)
        return Demeaned(x[:, 0] if squeeze else x, 1, 0.0, singletons)

    (c1, g1), (c2, g2) = factors[0], factors[1]
    n = x.shape[0]
    if n == g1 * g2:
        if np.array_equal(c1, np.repeat(np.arange(g1), g2)) and \
                np.array_equal(c2, np.tile(np.arange(g2), g1)):
            # sorted complete rectangle: x - mean_1 - mean_2 + grand mean
            cube = x.reshape(g1, g2, -1)
            cube -= cube.mean(axis=1, keepdims=True)
            cube -= cube.mean(axis=0, keepdims=True)
            return Demeaned(x[:, 0] if squeeze else x, 1, 0.0, singletons)
        if np.unique(c1.astype(np.int64) * g2 + c2).size == n:
            grand = x.mean(axis=0)
            m1 = (mats[0][0] @ x) / mats[0][1][:, None]
            m2 = (mats[1][0] @ x) / mats[1][1][:, None]
            x -= m1[c1]
            x -= m2[c2]
            x += grand
            return Demeaned(x[:, 0] if squeeze else x, 1, 0.0, singletons)

    worst = np.inf
    for it in range(1, max_iter + 1):
        for k in range(len(factors)):
            sweep(k)
        worst = 0.0
        for k in range(len(factors) - 1):
            m, counts = mats[k]
            means = (m @ x) / counts[:, None]
            worst = max(worst, float(np.max(np.abs(means) / scale)))
        if worst < tol:
            return Demeaned(x[:, 0] if squeeze else x, it, worst, singletons)
    raise ConvergenceError(
        f"fixed-effect absorption did not converge in {max_iter} sweeps "
        f"(largest relative group mean {worst:.3g})")


def two_way_demean(values: np.ndarray, county: np.ndarray, period: np.ndarray,
                   tol: float = 1e-10, max_iter: int = 10_000) -> Demeaned:
    return absorb(values, [county, period], tol=tol, max_iter=max_iter)


@dataclass(frozen=True)
class OLSResult:
    coef: np.ndarray
    resid: np.ndarray
    r: np.ndarray  # upper-triangular factor of X, X'X = R'R


def _cholesky_r(aug: np.ndarray):
    """Triangular factor of ``aug`` from its equilibrated Gram matrix.

    Returns None when any regressor's orthogonal component relative to its
    norm falls below ``CHOLESKY_MIN_RATIO``; the caller then uses QR.
    """
    k = aug.shape[1] - 1
    gram = aug.T @ aug
    d = np.sqrt(np.diag(gram))
    if np.any(d[:k] == 0):
        return None
    d[d == 0] = 1.0
    try:
        c = linalg.cholesky(gram / np.outer(d, d), lower=False, check_finite=False)
    except linalg.LinAlgError:
        return None
    if np.min(np.abs(np.diag(c))[:k]) < CHOLESKY_MIN_RATIO:
        return None
    return c * d[None, :], np.sqrt(np.diag(gram)[:k])


def _ols_aug(aug: np.ndarray, columns: Sequence[str] | None, method: str) -> OLSResult:
    n, k = aug.shape[0], aug.shape[1] - 1
    if n <= k:
        raise EstimationError(f"{n} observations for {k} regressors")
    if method not in ("auto", "qr"):
        raise EstimationError(f"unknown least-squares method {method!r}")
    found = _cholesky_r(aug) if method == "auto" and n * k >= 200_000 else None
    if found is None:
        norms = np.sqrt(np.einsum("ij,ij->j", aug[:, :k], aug[:, :k]))
        r_aug = linalg.qr(np.asfortranarray(aug), mode="r", check_finite=False)[0]
    else:
        r_aug, norms = found
    r = np.triu(r_aug[:k, :k])
    diag = np.abs(np.diag(r))
    bad = (norms == 0) | (diag <= RANK_TOL * np.where(norms == 0, 1.0, norms))
    if bad.any():
        names = [columns[j] if columns is not None else str(j) for j in np.flatnonzero(bad)]
        raise EstimationError(f"rank-deficient design; dependent column(s): {', '.join(names)}")
    coef = linalg.solve_triangular(r, r_aug[:k, k], check_finite=False)
    resid = aug[:, k] - aug[:, :k] @ coef
    return OLSResult(coef, resid, r)


def ols_fit(X: np.ndarray, y: np.ndarray, columns: Sequence[str] | None = None,
            method: str = "auto") -> OLSResult:
    """Least squares through the triangular factor of ``[X | y]``.

    ``method="qr"`` uses Householder QR. ``"auto"`` uses a Cholesky factor
    of the column-equilibrated Gram matrix for large designs whose columns
    are far from collinear (the same factor in exact arithmetic, at half the
    cost) and QR otherwise. A column whose component orthogonal to the
    preceding columns is below ``RANK_TOL`` relative to its own norm is
    reported as dependent.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise EstimationError("X must be 2-d with one row per element of y")
    return _ols_aug(np.column_stack([X, y]), columns, method)


def period_scores(X: np.ndarray, resid: np.ndarray, period: np.ndarray) -> np.ndarray:
    """Cross-sectional sums of moment conditions on the full period grid.

    Row ``j`` holds ``sum_c x_ct e_ct`` for period ``min(period) + j``;
    periods absent from the design have zero rows.
    """
    p = np.asarray(period, dtype=np.int64)
    p = p - p.min()
    n_p = int(p.max()) + 1
    m = sparse.csr_matrix((resid, (p, np.arange(p.size))), shape=(n_p, p.size))
    return np.asarray(m @ X)


def dk_covariance(X: np.ndarray, resid: np.ndarray, period: np.ndarray, bandwidth: int,
                  r: np.ndarray | None = None, small_sample: bool = True) -> np.ndarray:
    """Driscoll-Kraay covariance with Bartlett weights.

    ``S = O_0 + sum_{j=1..m} (1 - j/(m+1)) (O_j + O_j')`` with
    ``O_j = sum_t h_t h_{t-j}'`` and ``h_t`` the period sums of ``x e``;
    ``V = (X'X)^-1 S (X'X)^-1``, times ``T/(T-1)`` when ``small_sample``.
    ``r`` is an optional triangular factor of ``X'X`` to reuse.
    """
    X = np.asarray(X, dtype=float)
    resid = np.asarray(resid, dtype=float)
    n_periods = np.unique(period).size
    if n_periods == 0:
        raise EstimationError("no periods in design")
    if bandwidth < 0:
        raise EstimationError("bandwidth must be >= 0")
    if bandwidth >= n_periods:
        raise EstimationError(f"bandwidth {bandwidth} >= number of periods {n_periods}")
    hs = period_scores(X, resid, period)
    S = hs.T @ hs
    for j in range(1, bandwidth + 1):
        if j >= hs.shape[0]:
            break
        g = hs[j:].T @ hs[:-j]
        S += (1.0 - j / (bandwidth + 1.0)) * (g + g.T)
    if small_sample and n_periods > 1:
        S *= n_periods / (n_periods - 1.0)
    if r is None:
        r = linalg.qr(X, mode="r", check_finite=False)[0][:X.shape[1], :]
    rinv = linalg.solve_triangular(np.triu(r), np.eye(r.shape[0]), check_finite=False)
    bread = rinv @ rinv.T
    V = bread @ S @ bread
    return (V + V.T) / 2.0


@dataclass(frozen=True)
class FitResult:
    """One horizon's fit. Coefficient order follows the design columns."""

    coef: np.ndarray
    columns: tuple[str, ...]
    resid: np.ndarray
    cov: np.ndarray
    n_obs: int
    bandwidth: int
    h: int
    n_periods: int
    iterations: int = 0
    singletons: int = 0
    n_key: int = 1

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def __getitem__(self, name: str) -> float:
        return float(self.coef[self.columns.index(name)])

    def se_of(self, name: str) -> float:
        return float(self.se[self.columns.index(name)])


def default_bandwidth(h: int, n_periods: int) -> int:
    """h + 1, capped below the number of periods."""
    return max(0, min(h + 1, n_periods - 1))


def _absorbed(design: HorizonDesign, tol: float, max_iter: int) -> Demeaned:
    return absorb(np.column_stack([design.X, design.y]), design.fe_labels(),
                  tol=tol, max_iter=max_iter, overwrite=True)


def fit_coefficients(design: HorizonDesign, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    dm = _absorbed(design, tol, max_iter)
    return _ols_aug(dm.values, design.columns, "auto").coef


def fit(design: HorizonDesign, bandwidth: int | None = None, tol: float = 1e-10,
        max_iter: int = 10_000, small_sample: bool = True) -> FitResult:
    """Absorb fixed effects, solve least squares and attach DK covariance.

    ``bandwidth=None`` uses :func:`default_bandwidth`.
    """
    dm = _absorbed(design, tol, max_iter)
    Xd = dm.values[:, :-1]
    ols = _ols_aug(dm.values, design.columns, "auto")
    n_periods = int(np.unique(design.period).size)
    m = default_bandwidth(design.h, n_periods) if bandwidth is None else int(bandwidth)
    cov = dk_covariance(Xd, ols.resid, design.period, m, r=ols.r, small_sample=small_sample)
    return FitResult(ols.coef, design.columns, ols.resid, cov, design.n_obs, m, design.h,
                     n_periods, dm.iterations, dm.singletons, design.n_key)
