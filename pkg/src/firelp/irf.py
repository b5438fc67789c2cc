"""Impulse responses, cumulative effects and county block jackknife.

Coefficients are estimated per horizon in log units per shock unit
(``beta``). Reported responses are rescaled to percentage points for an
impulse of ``impulse_size`` shock units: ``beta * impulse_size * 100``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse
from scipy.stats import norm

from .design import DesignBuilder, HorizonDesign, ModelSpec
from .errors import EstimationError, InputError
from .estimator import RANK_TOL, FitResult, fit, fit_coefficients
from .panel import PanelDataset

DEFAULT_IMPULSE = 13.1


def rescale(raw, impulse_size: float):
    """Per-unit log response -> percentage points for one impulse."""
    if not impulse_size > 0:
        raise InputError("impulse_size must be positive")
    return np.asarray(raw, dtype=float) * impulse_size * 100.0


def normal_band(center, se, level: float) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < level < 1:
        raise InputError("confidence level must lie in (0, 1)")
    z = norm.ppf((1.0 + level) / 2.0)
    center = np.asarray(center, dtype=float)
    se = np.asarray(se, dtype=float)
    return center - z * se, center + z * se


@dataclass(frozen=True)
class ImpulseResponse:
    """Response path of one regressor over horizons 0..H."""

    term: str
    beta: np.ndarray
    se: np.ndarray
    impulse_size: float = DEFAULT_IMPULSE
    ci_level: float = 0.95
    n_obs: np.ndarray | None = None
    bandwidth: np.ndarray | None = None

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        se = np.asarray(self.se, dtype=float)
        if beta.shape != se.shape or beta.ndim != 1:
            raise InputError("beta and se must be 1-d arrays of equal length")
        if np.any(se < 0):
            raise InputError("standard errors must be non-negative")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "se", se)

    @property
    def H(self) -> int:
        return self.beta.size - 1

    @property
    def horizons(self) -> np.ndarray:
        return np.arange(self.beta.size)

    @property
    def scaled_beta(self) -> np.ndarray:
        return rescale(self.beta, self.impulse_size)

    @property
    def scaled_se(self) -> np.ndarray:
        return rescale(self.se, self.impulse_size)

    def band(self, level: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        return confidence_band(self, self.ci_level if level is None else level)

    def per_unit_kernel(self) -> np.ndarray:
        """Scaled response per shock unit (pp per unit), the HEI kernel."""
        return self.scaled_beta / self.impulse_size


def confidence_band(irf: ImpulseResponse, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    """Normal-quantile band around the scaled response."""
    return normal_band(irf.scaled_beta, irf.scaled_se, level)


def _fit_horizon(builder: DesignBuilder, h: int, bandwidth, small_sample: bool = True) -> FitResult:
    try:
        return fit(builder.design(h), bandwidth=bandwidth, small_sample=small_sample)
    except EstimationError as exc:
        if str(exc).startswith(f"horizon {h}:"):
            raise
        raise EstimationError(f"horizon {h}: {exc}") from exc


def horizon_fits(builder: DesignBuilder, H: int, bandwidth: int | None = None,
                 workers: int = 1, keep=None, small_sample: bool = True) -> list:
    """Fit horizons 0..H; ``keep`` maps each FitResult to what is retained."""
    keep = keep or (lambda f: f)
    task = lambda h: keep(_fit_horizon(builder, h, bandwidth, small_sample))  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(task, range(H + 1)))
    return [task(h) for h in range(H + 1)]


def estimate_irfs(panel: PanelDataset, spec: ModelSpec, H: int | None = None, *,
                  impulse_size: float = DEFAULT_IMPULSE, bandwidth: int | None = None,
                  ci_level: float = 0.95, workers: int = 1, small_sample: bool = True,
                  builder: DesignBuilder | None = None) -> dict[str, ImpulseResponse]:
    """Responses of every key regressor (shock, state paths, spatial terms)."""
    H = spec.horizons if H is None else H
    if H < 0:
        raise InputError("H must be >= 0")
    builder = builder or DesignBuilder(panel, spec)

    def summary(f: FitResult):
        return f.columns[:f.n_key], f.coef[:f.n_key], f.se[:f.n_key], f.n_obs, f.bandwidth

    rows = horizon_fits(builder, H, bandwidth, workers, keep=summary, small_sample=small_sample)
    keys = rows[0][0]
    n_obs = np.array([r[3] for r in rows])
    bws = np.array([r[4] for r in rows])
    out = {}
    for j, term in enumerate(keys):
        out[term] = ImpulseResponse(term, np.array([r[1][j] for r in rows]),
                                    np.array([r[2][j] for r in rows]), impulse_size,
                                    ci_level, n_obs, bws)
    return out


def estimate_irf(panel: PanelDataset, spec: ModelSpec, H: int | None = None, *,
                 term: str | None = None, **kwargs) -> ImpulseResponse:
    """Response of one key regressor (default: the first, i.e. the shock)."""
    paths = estimate_irfs(panel, spec, H, **kwargs)
    if term is None:
        return next(iter(paths.values()))
    try:
        return paths[term]
    except KeyError:
        raise InputError(f"no key regressor {term!r}; have {list(paths)}") from None


@dataclass(frozen=True)
class CumulativeEffect:
    phi: float
    H: int
    sd: float | None = None
    K: int | None = None
    drop: float | None = None
    seed: int | None = None
    include_impact: bool = False


def cumulative_effect(irf: ImpulseResponse, H: int | None = None,
                      include_impact: bool = False) -> CumulativeEffect:
    """Sum of scaled responses over horizons 1..H (0..H with ``include_impact``)."""
    H = irf.H if H is None else H
    if not 0 <= H <= irf.H:
        raise InputError(f"H = {H} outside the estimated horizons 0..{irf.H}")
    start = 0 if include_impact else 1
    phi = math.fsum(irf.scaled_beta[start:H + 1].tolist())
    return CumulativeEffect(phi, H, include_impact=include_impact)


# --- block jackknife ------------------------------------------------------

@dataclass(frozen=True)
class JackknifeResult:
    """County block jackknife over K random subsets.

    ``draws`` holds the scaled response path of each subset. ``cov_raw`` is
    their sample covariance; ``cov`` applies the delete-d factor
    ``(n - d) / d`` (n units, d dropped per draw), which makes it an estimate
    of the sampling covariance of the full-sample path.
    """

    draws: np.ndarray
    cov_raw: np.ndarray
    cov: np.ndarray
    n_units: int
    n_drop: int
    K: int
    drop: float
    seed: int
    failures: int
    include_impact: bool = False
    dropped: np.ndarray = field(default=None, repr=False)

    @property
    def H(self) -> int:
        return self.draws.shape[1] - 1

    def _phi_sd(self, cov: np.ndarray, H: int | None) -> float:
        H = self.H if H is None else H
        start = 0 if self.include_impact else 1
        block = cov[start:H + 1, start:H + 1]
        return float(np.sqrt(max(block.sum(), 0.0)))

    def sd_phi(self, H: int | None = None) -> float:
        return self._phi_sd(self.cov, H)

    def sd_phi_raw(self, H: int | None = None) -> float:
        return self._phi_sd(self.cov_raw, H)

    def cumulative(self, irf: ImpulseResponse, H: int | None = None) -> CumulativeEffect:
        ce = cumulative_effect(irf, H, self.include_impact)
        return CumulativeEffect(ce.phi, ce.H, self.sd_phi(ce.H), self.K, self.drop, self.seed,
                                self.include_impact)


def _draw_subset(seed: int, k: int, attempt: int, n_units: int, n_drop: int) -> np.ndarray:
    rng = np.random.default_rng([seed, k, attempt])
    return np.sort(rng.choice(n_units, size=n_drop, replace=False))


def _rectangle(design: HorizonDesign) -> tuple[int, int] | None:
    """(counties, periods) if the design is a complete sorted rectangle."""
    if tuple(design.fe) != ("county", "period"):
        return None
    cs, ts = np.unique(design.county), np.unique(design.period)
    n_c, n_t = cs.size, ts.size
    if design.n_obs != n_c * n_t:
        return None
    if not (np.array_equal(design.county, np.repeat(cs, n_t))
            and np.array_equal(design.period, np.tile(ts, n_c))):
        return None
    return n_c, n_t


def _solve_normal(A: np.ndarray) -> np.ndarray | None:
    """Solve the bordered normal equations; None if rank-deficient."""
    k = A.shape[0] - 1
    try:
        c = linalg.cholesky(A[:k, :k], lower=False, check_finite=False)
    except linalg.LinAlgError:
        return None
    d = np.sqrt(np.clip(np.diag(A[:k, :k]), 0.0, None))
    if np.any(np.abs(np.diag(c)) <= RANK_TOL * np.where(d == 0, 1.0, d)):
        return None
    return linalg.cho_solve((c, False), A[:k, k], check_finite=False)


def _fast_draws(design: HorizonDesign, unit_codes: np.ndarray, subsets: list[np.ndarray],
                col: int, chunk: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Shock coefficient for each subset from per-county cross products.

    Valid for complete rectangles: county demeaning is then per county and
    period demeaning over the retained counties reduces to subtracting
    period sums, so every subset's normal equations follow from totals.
    """
    n_c, n_t = _rectangle(design)
    k = design.X.shape[1]
    Z = np.empty((design.n_obs, k + 1))
    Z[:, :k] = design.X
    Z[:, k] = design.y
    Z = Z.reshape(n_c, n_t, k + 1)
    Z -= Z.mean(axis=1, keepdims=True)
    S = np.matmul(Z.transpose(0, 2, 1), Z)
    S_tot = S.sum(axis=0)
    s_tot = Z.sum(axis=0)
    # map unit codes (panel county index) to design county positions
    pos = np.full(int(max(unit_codes.max(), design.county.max())) + 1, -1)
    pos[np.unique(design.county)] = np.arange(n_c)
    out = np.full(len(subsets), np.nan)
    ok = np.zeros(len(subsets), dtype=bool)
    S_flat = S.reshape(n_c, -1)
    Z_flat = Z.reshape(n_c, -1)
    for start in range(0, len(subsets), chunk):
        block = subsets[start:start + chunk]
        rows, cols = [], []
        for i, sub in enumerate(block):
            p = pos[unit_codes[sub]]
            p = p[p >= 0]
            rows += [i] * p.size
            cols += p.tolist()
        M = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(block), n_c))
        n_kept = n_c - np.asarray(M.sum(axis=1)).ravel()
        SD = np.asarray(M @ S_flat).reshape(len(block), k + 1, k + 1)
        sD = np.asarray(M @ Z_flat).reshape(len(block), n_t, k + 1)
        s = s_tot[None] - sD
        P = np.matmul(s.transpose(0, 2, 1), s)
        for i in range(len(block)):
            if n_kept[i] < 2:
                continue
            A = S_tot - SD[i] - P[i] / n_kept[i]
            coef = _solve_normal(A)
            if coef is not None:
                out[start + i] = coef[col]
                ok[start + i] = True
    return out, ok


def _refit_draws(design: HorizonDesign, unit_codes: np.ndarray, subsets: list[np.ndarray],
                 col: int) -> tuple[np.ndarray, np.ndarray]:
    out = np.full(len(subsets), np.nan)
    ok = np.zeros(len(subsets), dtype=bool)
    for i, sub in enumerate(subsets):
        rows = np.flatnonzero(~np.isin(design.county, unit_codes[sub]))
        if rows.size == 0:
            continue
        try:
            out[i] = fit_coefficients(design.subset(rows))[col]
            ok[i] = True
        except EstimationError:
            pass
    return out, ok


def block_jackknife(panel: PanelDataset, spec: ModelSpec, H: int | None = None, *,
                    drop: float = 0.05, K: int = 1000, seed: int = 0,
                    impulse_size: float = DEFAULT_IMPULSE, term: str | None = None,
                    method: str = "auto", include_impact: bool = False,
                    max_failure_share: float = 0.10,
                    builder: DesignBuilder | None = None) -> JackknifeResult:
    """Re-estimate the response on K random subsets that each omit a share
    ``drop`` of counties (sampled without replacement, independently per
    draw, reproducibly from ``seed``).

    ``method="fast"`` uses per-county sufficient statistics (complete
    rectangular designs only), ``"refit"`` re-runs absorption and least
    squares per subset, ``"auto"`` picks per horizon. A subset whose fit
    fails is replaced by a fresh draw; more than ``max_failure_share * K``
    failures is an error.
    """
    if K < 2:
        raise InputError("jackknife needs K >= 2")
    if not 0 <= drop < 1:
        raise InputError("drop share must lie in [0, 1)")
    if method not in ("auto", "fast", "refit"):
        raise InputError(f"unknown jackknife method {method!r}")
    H = spec.horizons if H is None else H
    builder = builder or DesignBuilder(panel, spec)

    first = builder.design(0)
    unit_codes = np.unique(first.county)
    n_units = unit_codes.size
    n_drop = int(round(drop * n_units))
    if drop > 0:
        n_drop = max(1, n_drop)
    if n_units - n_drop < 2:
        raise EstimationError("too few counties retained per jackknife draw")
    col = 0 if term is None else first.columns.index(term)

    attempts = np.zeros(K, dtype=int)
    subsets = [_draw_subset(seed, k, 0, n_units, n_drop) for k in range(K)]
    betas = np.full((K, H + 1), np.nan)
    todo = np.arange(K)
    failures = 0
    while todo.size:
        failed = np.zeros(K, dtype=bool)
        for h in range(H + 1):
            design = first if h == 0 else builder.design(h)
            subs = [subsets[k] for k in todo]
            fast = method == "fast" or (method == "auto" and _rectangle(design) is not None)
            if method == "fast" and _rectangle(design) is None:
                raise EstimationError(f"horizon {h}: design is not a complete rectangle")
            vals, ok = (_fast_draws if fast else _refit_draws)(design, unit_codes, subs, col)
            betas[todo, h] = vals
            failed[todo[~ok]] = True
        redo = np.flatnonzero(failed)
        failures += redo.size
        if failures > max_failure_share * K:
            raise EstimationError(f"{failures} of {K} jackknife draws failed")
        for k in redo:
            attempts[k] += 1
            subsets[k] = _draw_subset(seed, int(k), int(attempts[k]), n_units, n_drop)
        todo = redo

    draws = rescale(betas, impulse_size)
    cov_raw = np.atleast_2d(np.cov(draws, rowvar=False, ddof=1))
    factor = (n_units - n_drop) / n_drop if n_drop else 1.0
    return JackknifeResult(draws, cov_raw, cov_raw * factor, n_units, n_drop, K, drop, seed,
                           failures, include_impact, np.array(subsets))
