import numpy as np
import pytest

from firelp.design import DesignBuilder, ModelSpec
from firelp.errors import EstimationError, InputError
from firelp.estimator import fit
from firelp.irf import (ImpulseResponse, block_jackknife, confidence_band, cumulative_effect,
                        estimate_irf, estimate_irfs, normal_band, rescale)
from firelp.panel import PanelDataset
from firelp.synth import DgpConfig, generate


def small_panel(seed=0, N=40, T=80, **kw):
    return generate(DgpConfig(seed=seed, n_counties=N, n_periods=T, **kw))[0]


SPEC = ModelSpec("emp", "burn", horizons=4, outcome_lags=3, shock_lags=3)


def path(scaled, impulse=0.01):
    # impulse 0.01 makes the percentage-point scale factor exactly 1
    scaled = np.asarray(scaled, dtype=float)
    return ImpulseResponse("burn", scaled, np.zeros_like(scaled), impulse_size=impulse)


# --- rescaling and bands --------------------------------------------------

def test_rescale_examples():
    assert rescale(0.0, 13.1) == 0.0
    assert rescale(-4.58e-6, 13.1) == pytest.approx(-0.0060, abs=1e-6)
    assert rescale(3e-5, 2 * 13.1) == 2 * rescale(3e-5, 13.1)
    with pytest.raises(InputError):
        rescale(1.0, 0.0)


def test_scaled_values_follow_beta():
    irf = ImpulseResponse("burn", [1e-5, -2e-5], [1e-6, 2e-6], impulse_size=13.1)
    np.testing.assert_array_equal(irf.scaled_beta, np.array([1e-5, -2e-5]) * 13.1 * 100.0)
    np.testing.assert_array_equal(irf.scaled_se, np.array([1e-6, 2e-6]) * 13.1 * 100.0)
    with pytest.raises(InputError):
        ImpulseResponse("burn", [0.0], [-1.0])


def test_band_examples():
    lo, hi = normal_band(1.0, 0.5, 0.95)
    assert lo == pytest.approx(0.020, abs=5e-5) and hi == pytest.approx(1.980, abs=5e-5)
    assert lo == pytest.approx(1 - 0.5 * 1.959964, abs=1e-6)
    lo0, hi0 = confidence_band(path([0.3]), 0.95)
    assert lo0[0] == hi0[0] == pytest.approx(0.3)
    irf = ImpulseResponse("burn", [1.0], [0.5], impulse_size=0.01)
    widths = [np.diff(np.vstack(confidence_band(irf, lv)), axis=0)[0, 0]
              for lv in (0.5, 0.8, 0.9, 0.95, 0.99)]
    assert np.all(np.diff(widths) > 0)
    with pytest.raises(InputError):
        confidence_band(irf, 1.0)


# --- cumulative effect ----------------------------------------------------

def test_cumulative_examples():
    assert cumulative_effect(path(np.zeros(5))).phi == 0.0
    assert cumulative_effect(path([9.0, 0.25, 0.25, 0.25, 0.25])).phi == 1.0
    assert cumulative_effect(path([5.0, 0.1, -0.2, 0.3])).phi == pytest.approx(0.2, abs=1e-15)
    assert cumulative_effect(path([5.0, 0.1, -0.2, 0.3]), include_impact=True).phi == \
        pytest.approx(5.2, abs=1e-14)


def test_cumulative_matches_stored_values_and_is_linear():
    rng = np.random.default_rng(0)
    a = ImpulseResponse("burn", rng.normal(size=37) * 1e-5, np.ones(37), impulse_size=13.1)
    b = ImpulseResponse("burn", rng.normal(size=37) * 1e-5, np.ones(37), impulse_size=13.1)
    phi = cumulative_effect(a, 36).phi
    assert phi == pytest.approx(sum(a.scaled_beta[1:]), rel=1e-13)
    ab = ImpulseResponse("burn", a.beta + b.beta, np.ones(37), impulse_size=13.1)
    assert cumulative_effect(ab).phi == pytest.approx(
        cumulative_effect(a).phi + cumulative_effect(b).phi, rel=1e-12, abs=1e-15)
    with pytest.raises(InputError):
        cumulative_effect(a, 37)


# --- horizon loop ---------------------------------------------------------

def test_single_horizon_equals_one_shot_fit():
    p = small_panel()
    irf = estimate_irf(p, SPEC, 0)
    f = fit(DesignBuilder(p, SPEC).design(0))
    assert irf.H == 0
    assert irf.beta[0] == f.coef[0] and irf.se[0] == f.se[0]


def test_horizons_fit_independently():
    p = small_panel(1)
    irf = estimate_irf(p, SPEC, 4)
    b = DesignBuilder(p, SPEC)
    for h in range(5):
        f = fit(b.design(h))
        assert irf.beta[h] == f.coef[0]
        assert irf.bandwidth[h] == h + 1


def test_threaded_horizons_match_serial():
    p = small_panel(2)
    serial = estimate_irfs(p, SPEC)
    threaded = estimate_irfs(p, SPEC, workers=3)
    for term in serial:
        np.testing.assert_array_equal(serial[term].beta, threaded[term].beta)
        np.testing.assert_array_equal(serial[term].se, threaded[term].se)


def test_failing_horizon_is_named():
    D = np.zeros((6, 30))
    D[:, 5:25:3] = 1.0
    rng = np.random.default_rng(3)
    emp = np.exp(np.cumsum(rng.normal(0, 0.01, (6, 30)), axis=1))
    p = PanelDataset(tuple("abcdef"), np.arange(30), "monthly", {"emp": emp, "burn": D})
    # identical burns in every county: the shock is absorbed by period effects
    with pytest.raises(EstimationError, match="horizon 0"):
        estimate_irf(p, ModelSpec("emp", "burn", horizons=2, outcome_lags=1, shock_lags=1))


def test_null_band_rate_light_tails_impact():
    """No dependence on the shock: |beta_0| < 2 se in at least 93% of runs.

    Light-tailed burn sizes at the impact horizon, where the LP residual has
    no mechanical serial correlation.
    """
    hits = 0
    spec = ModelSpec("emp", "burn", horizons=0)
    for r in range(200):
        p, _ = generate(DgpConfig(seed=30000 + r, n_counties=200, n_periods=100,
                                  kernel=(0.0,), burn_sigma=0.5))
        f = fit(DesignBuilder(p, spec).design(0))
        hits += abs(f.coef[0]) < 2 * f.se[0]
    assert hits / 200 >= 0.93


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="Bartlett weights with bandwidth h+1 under-estimate the "
                   "MA(h) long-run variance and heavy-tailed burns add leverage; "
                   "bands undercover at this sample size")
def test_null_band_rate_default_burns_all_horizons():
    H = 6
    spec = ModelSpec("emp", "burn", horizons=H)
    hits = np.zeros(H + 1)
    for r in range(200):
        p, _ = generate(DgpConfig(seed=7000 + r, n_counties=200, n_periods=100, kernel=(0.0,)))
        irf = estimate_irf(p, spec)
        hits += np.abs(irf.scaled_beta) < 2 * irf.scaled_se
    assert np.all(hits / 200 >= 0.93)


# --- jackknife ------------------------------------------------------------

def test_jackknife_rejects_bad_arguments():
    p = small_panel()
    with pytest.raises(InputError, match="K >= 2"):
        block_jackknife(p, SPEC, K=1)
    with pytest.raises(InputError):
        block_jackknife(p, SPEC, K=5, drop=1.0)


def test_jackknife_without_dropping_has_zero_covariance():
    jk = block_jackknife(small_panel(), SPEC, K=2, drop=0.0)
    assert np.all(jk.cov == 0) and jk.sd_phi() == 0


def test_jackknife_deterministic_given_seed():
    p = small_panel(4)
    a = block_jackknife(p, SPEC, K=20, seed=11)
    b = block_jackknife(p, SPEC, K=20, seed=11)
    c = block_jackknife(p, SPEC, K=20, seed=12)
    np.testing.assert_array_equal(a.cov, b.cov)
    assert not np.array_equal(a.cov, c.cov)


def test_jackknife_fast_and_refit_agree():
    p = small_panel(5)
    fast = block_jackknife(p, SPEC, K=15, seed=3, method="fast")
    slow = block_jackknife(p, SPEC, K=15, seed=3, method="refit")
    scale = np.abs(slow.draws).max()
    np.testing.assert_allclose(fast.draws, slow.draws, rtol=0, atol=1e-10 * scale)


def test_jackknife_cov_symmetric_psd_and_scaled():
    jk = block_jackknife(small_panel(6), SPEC, K=30, seed=1)
    np.testing.assert_array_equal(jk.cov, jk.cov.T)
    assert np.linalg.eigvalsh(jk.cov).min() >= -1e-10 * np.abs(jk.cov).max()
    d, n = jk.n_drop, jk.n_units
    np.testing.assert_allclose(jk.cov, jk.cov_raw * (n - d) / d, rtol=1e-15)
    assert jk.sd_phi() == pytest.approx(np.sqrt(jk.cov[1:, 1:].sum()), rel=1e-12)


def _single_fire_county_panel(N):
    rng = np.random.default_rng(8)
    T = 60
    D = np.zeros((N, T))
    D[0] = np.where(rng.random(T) < 0.3, rng.lognormal(1, 1, T), 0.0)
    emp = np.exp(np.cumsum(rng.normal(0, 0.01, (N, T)), axis=1))
    return PanelDataset(tuple(f"c{i:02d}" for i in range(N)), np.arange(T), "monthly",
                        {"emp": emp, "burn": D})


def test_jackknife_resamples_failed_draws():
    # dropping the only burning county leaves the shock column empty
    p = _single_fire_county_panel(40)
    spec = ModelSpec("emp", "burn", horizons=1, outcome_lags=1, shock_lags=1)
    jk = block_jackknife(p, spec, K=60, drop=0.025, seed=0)
    assert 0 < jk.failures <= 6
    assert np.isfinite(jk.draws).all()
    assert not np.any(jk.dropped == 0)


def test_jackknife_too_many_failures():
    p = _single_fire_county_panel(10)
    spec = ModelSpec("emp", "burn", horizons=1, outcome_lags=1, shock_lags=1)
    with pytest.raises(EstimationError, match="jackknife draws failed"):
        block_jackknife(p, spec, K=20, drop=0.5, seed=0)
