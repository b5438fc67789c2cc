"""Synthetic county-month panels with a planted fire response.

Log employment grows as

    dy[c, t] = a_c + m_t + r * dy[c, t-1] + sum_k k_k * D[c, t-k] / 100 + e[c, t]

with the per-period kernel ``k`` in percentage points per km^2. Burns are
zero-inflated lognormal: a fire occurs with probability ``fire_prob``
(optionally persistent through a two-state Markov chain) and its size is
lognormal with mean ``burn_mean``.

The default kernel is derived from a target response path: a dip of about
-0.006 pp one month after a 13.1 km^2 impulse, partial recovery near one
year, a trough of about -0.015 pp at two years and zero from three years on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import InputError
from .panel import PanelDataset, parse_period
from .spatial import AdjacencyMatrix, load_adjacency

DEFAULT_IMPULSE = 13.1
REGIONS = ("Midwest", "Northeast", "South", "West")
IRF_KNOTS = ((0, -0.003), (1, -0.006), (6, -0.005), (12, -0.003), (24, -0.015), (36, 0.0))


def default_irf(H: int = 36, knots=IRF_KNOTS) -> np.ndarray:
    """Target response path in pp for a 13.1 km^2 impulse, horizons 0..H."""
    xs, ys = zip(*knots)
    h = np.arange(H + 1)
    return np.where(h <= xs[-1], np.interp(h, xs, ys), 0.0)


def kernel_from_irf(irf_pp, impulse_size: float = DEFAULT_IMPULSE) -> np.ndarray:
    """Per-period growth kernel (pp per unit) whose cumulative response is ``irf_pp``."""
    irf_pp = np.asarray(irf_pp, dtype=float)
    return np.diff(irf_pp, prepend=0.0) / impulse_size


def irf_from_kernel(kernel, H: int, impulse_size: float = DEFAULT_IMPULSE,
                    outcome_ar: float = 0.0) -> np.ndarray:
    """Local-projection target (pp per impulse) implied by a growth kernel.

    Growth at t+j responds by ``(kernel * ar^j)_j``; the projection of
    ln y[t+h] - ln y[t-1] accumulates those responses.
    """
    k = np.zeros(H + 1)
    kernel = np.asarray(kernel, dtype=float)
    n = min(H + 1, kernel.size)
    k[:n] = kernel[:n]
    if outcome_ar:
        growth = np.zeros(H + 1)
        for j in range(H + 1):
            growth[j] = sum(k[i] * outcome_ar ** (j - i) for i in range(j + 1))
    else:
        growth = k
    return np.cumsum(growth) * impulse_size


def _as_kernel(x) -> tuple[float, ...] | None:
    return None if x is None else tuple(float(v) for v in np.asarray(x, dtype=float).ravel())


@dataclass(frozen=True)
class DgpConfig:
    """Synthetic panel parameters.

    ``kernel`` is the per-period growth effect (pp per km^2) applied to
    every fire, or to fires in the low state when ``high_kernel`` is set.
    ``group_kernel`` replaces ``kernel`` for counties strictly above the
    median of attribute ``group_attribute``. Standard deviations are in log
    points per period.
    """

    n_counties: int = 500
    n_periods: int = 250
    kernel: tuple[float, ...] | None = None
    high_kernel: tuple[float, ...] | None = None
    group_kernel: tuple[float, ...] | None = None
    group_attribute: str = "hhi"
    county_fe_sd: float = 0.002
    period_fe_sd: float = 0.003
    noise_sd: float = 0.0015
    mean_growth: float = 0.0003
    outcome_ar: float = 0.0
    fire_prob: float = 1.0 / 13.1
    burn_mean: float = 13.1
    burn_sigma: float = 1.94
    persistence: float = 0.0
    fire_prone_share: float = 1.0
    unemp_mean: float = 5.0
    unemp_ar: float = 0.9
    unemp_sd: float = 0.3
    state_percentile: float = 70.0
    migration_kernel: tuple[float, ...] | None = None
    migration_sd: float = 0.0005
    base_employment: float = 10_000.0
    start: str = "2001-01"
    seed: int = 0

    def __post_init__(self):
        for name in ("kernel", "high_kernel", "group_kernel", "migration_kernel"):
            object.__setattr__(self, name, _as_kernel(getattr(self, name)))
        if self.n_counties < 1 or self.n_periods < 2:
            raise InputError("need at least one county and two periods")
        for name in ("county_fe_sd", "period_fe_sd", "noise_sd", "unemp_sd", "migration_sd",
                     "burn_sigma"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be >= 0")
        if not 0 <= self.persistence < 1:
            raise InputError("persistence must lie in [0, 1)")
        if not 0 <= self.fire_prob <= 1 or not 0 <= self.fire_prone_share <= 1:
            raise InputError("probabilities must lie in [0, 1]")
        if not self.burn_mean > 0:
            raise InputError("burn_mean must be positive")
        if not -1 < self.outcome_ar < 1:
            raise InputError("outcome_ar must lie in (-1, 1)")

    @classmethod
    def from_mapping(cls, mapping) -> "DgpConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise InputError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**mapping)

    @property
    def base_kernel(self) -> np.ndarray:
        if self.kernel is not None:
            return np.asarray(self.kernel)
        return kernel_from_irf(default_irf(36))

    @property
    def burn_mu(self) -> float:
        """Log-scale location giving lognormal mean ``burn_mean``."""
        return math.log(self.burn_mean) - self.burn_sigma ** 2 / 2.0


@dataclass(frozen=True)
class SynthTruth:
    kernel: np.ndarray
    high_kernel: np.ndarray | None
    group_kernel: np.ndarray | None
    outcome_ar: float
    persistence: float
    fires: np.ndarray
    county_fe: np.ndarray
    period_fe: np.ndarray
    state: np.ndarray | None = None
    group: np.ndarray | None = None
    adjacency: AdjacencyMatrix | None = field(default=None, repr=False)

    def irf(self, H: int, which: str = "base", impulse_size: float = DEFAULT_IMPULSE) -> np.ndarray:
        """Planted response path in pp per impulse.

        ``which``: ``base`` (the low-state / below-median kernel), ``high``
        or ``group``. Exact for the local projection when burns are not
        persistent.
        """
        kernel = {"base": self.kernel, "low": self.kernel, "high": self.high_kernel,
                  "group": self.group_kernel}[which]
        if kernel is None:
            raise InputError(f"no {which} kernel planted")
        return irf_from_kernel(kernel, H, impulse_size, self.outcome_ar)


def _convolve(kernel: np.ndarray, d: np.ndarray) -> np.ndarray:
    out = np.zeros_like(d)
    T = d.shape[-1]
    for j, kj in enumerate(kernel[:T]):
        if kj:
            out[..., j:] += kj * d[..., :T - j]
    return out


def _burns(rng: np.random.Generator, cfg: DgpConfig, p: float) -> np.ndarray:
    # draw the same amount of randomness whatever p is, so later draws from
    # the county stream do not depend on the fire settings
    T = cfg.n_periods
    if cfg.persistence > 0:
        p11 = p + cfg.persistence * (1 - p)
        p01 = p * (1 - cfg.persistence)
        u = rng.random(T)
        occ = np.zeros(T, dtype=bool)
        occ[0] = u[0] < p
        for t in range(1, T):
            occ[t] = u[t] < (p11 if occ[t - 1] else p01)
    else:
        occ = rng.random(T) < p
    sizes = rng.lognormal(cfg.burn_mu, cfg.burn_sigma, T)
    return np.where(occ & (p > 0), sizes, 0.0)


def lattice_edges(counties, width: int | None = None) -> list[tuple[str, str]]:
    """Rook contiguity on a near-square grid, counties laid out row by row."""
    n = len(counties)
    width = width or max(1, int(math.ceil(math.sqrt(n))))
    edges = []
    for i in range(n):
        r, c = divmod(i, width)
        if c + 1 < width and i + 1 < n:
            edges.append((counties[i], counties[i + 1]))
        if i + width < n:
            edges.append((counties[i], counties[i + width]))
    return edges


def generate(config: DgpConfig) -> tuple[PanelDataset, SynthTruth]:
    """Draw one synthetic panel; deterministic given ``config.seed``.

    County c draws from its own stream seeded by (seed, c); period effects
    from (seed, "period").
    """
    cfg = config
    N, T = cfg.n_counties, cfg.n_periods
    start, freq = parse_period(cfg.start)
    counties = tuple(f"{10001 + i:05d}" for i in range(N))

    period_rng = np.random.default_rng([cfg.seed, 2**32 - 1])
    period_fe = period_rng.normal(0.0, cfg.period_fe_sd, T)
    unemp_common = period_rng.normal(0.0, cfg.unemp_sd / 2, T)

    county_fe = np.empty(N)
    fires = np.empty((N, T))
    noise = np.empty((N, T))
    unemp = np.empty((N, T))
    mig_noise = np.empty((N, T))
    base = np.empty(N)
    population = np.empty(N)
    hhi = np.empty(N)
    no_hs = np.empty(N)
    region = np.empty(N, dtype=object)
    for i in range(N):
        rng = np.random.default_rng([cfg.seed, i])
        county_fe[i] = cfg.mean_growth + rng.normal(0.0, cfg.county_fe_sd)
        prone = rng.random() < cfg.fire_prone_share
        fires[i] = _burns(rng, cfg, cfg.fire_prob if prone else 0.0)
        noise[i] = rng.normal(0.0, cfg.noise_sd, T)
        shocks = rng.normal(0.0, cfg.unemp_sd, T) + unemp_common
        u = np.empty(T)
        u[0] = shocks[0] / math.sqrt(max(1e-12, 1 - cfg.unemp_ar ** 2))
        for t in range(1, T):
            u[t] = cfg.unemp_ar * u[t - 1] + shocks[t]
        unemp[i] = np.clip(cfg.unemp_mean + rng.normal(0, 1.0) + u, 0.5, None)
        mig_noise[i] = rng.normal(0.0, cfg.migration_sd, T)
        base[i] = cfg.base_employment * rng.lognormal(0.0, 1.0)
        population[i] = base[i] * 2.0 * rng.lognormal(0.0, 0.2)
        shares = rng.dirichlet(np.full(10, 0.8))
        hhi[i] = float(np.sum(shares ** 2))
        no_hs[i] = rng.uniform(3.0, 60.0)
        region[i] = REGIONS[int(rng.integers(len(REGIONS)))]

    kernel = cfg.base_kernel
    group = None
    if cfg.group_kernel is not None:
        attr = {"hhi": hhi, "no_hs_share": no_hs, "population": population}.get(cfg.group_attribute)
        if attr is None:
            raise InputError(f"cannot split synthetic kernels on {cfg.group_attribute!r}")
        group = attr > np.median(attr)

    state = None
    if cfg.high_kernel is not None:
        thr = np.percentile(unemp, cfg.state_percentile, axis=1, keepdims=True)
        state = (unemp > thr).astype(float)

    def effect(kern: np.ndarray, d: np.ndarray, s) -> np.ndarray:
        if s is None:
            return _convolve(kern, d)
        return _convolve(np.asarray(cfg.high_kernel), d * s) + _convolve(kern, d * (1 - s))

    fire_effect = effect(kernel, fires, state)
    if group is not None:
        fire_effect[group] = effect(np.asarray(cfg.group_kernel), fires[group],
                                    None if state is None else state[group])

    shock = county_fe[:, None] + period_fe[None, :] + fire_effect / 100.0 + noise
    if cfg.outcome_ar:
        dy = np.empty((N, T))
        dy[:, 0] = shock[:, 0]
        for t in range(1, T):
            dy[:, t] = cfg.outcome_ar * dy[:, t - 1] + shock[:, t]
    else:
        dy = shock
    logemp = np.log(base)[:, None] + np.cumsum(dy, axis=1)

    series = {"emp": np.exp(logemp), "burn": fires, "unemp": unemp}
    if cfg.migration_kernel is not None:
        series["net_outmig"] = _convolve(np.asarray(cfg.migration_kernel), fires) / 100.0 + mig_noise
    attrs = {"population": population, "hhi": hhi, "no_hs_share": no_hs, "region": region}
    panel = PanelDataset(counties, np.arange(start, start + T), freq, series, attrs)
    adjacency = load_adjacency(lattice_edges(counties), counties)
    truth = SynthTruth(
        kernel=np.asarray(kernel),
        high_kernel=None if cfg.high_kernel is None else np.asarray(cfg.high_kernel),
        group_kernel=None if cfg.group_kernel is None else np.asarray(cfg.group_kernel),
        outcome_ar=cfg.outcome_ar, persistence=cfg.persistence, fires=fires,
        county_fe=county_fe, period_fe=period_fe, state=state, group=group,
        adjacency=adjacency,
    )
    return panel, truth


def plant_summary(config: DgpConfig) -> dict[str, float]:
    """Analytic burn moments implied by the configuration."""
    freq = config.fire_prob * config.fire_prone_share
    if freq == 0:
        return {"fire_frequency": 0.0, "mean_burn_given_burn": 0.0, "mean_burn": 0.0,
                "median_burn_given_burn": 0.0, "sd_burn_given_burn": 0.0}
    mean = config.burn_mean
    return {
        "fire_frequency": freq,
        "mean_burn_given_burn": mean,
        "mean_burn": freq * mean,
        "median_burn_given_burn": math.exp(config.burn_mu),
        "sd_burn_given_burn": mean * math.sqrt(math.expm1(config.burn_sigma ** 2)),
    }
