import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from firelp.design import DesignBuilder, ModelSpec, SpatialRule
from firelp.errors import InputError
from firelp.estimator import fit
from firelp.panel import PanelDataset
from firelp.spatial import (load_adjacency, read_edge_list, second_order, spatial_lag,
                            spatial_regressors)


def brute_second_order(W):
    n = W.shape[0]
    out = np.zeros_like(W)
    for i, j in itertools.product(range(n), range(n)):
        if i != j and any(W[i, k] and W[k, j] for k in range(n) if k not in (i, j)):
            out[i, j] = 1
    return out


def test_single_edge_leaves_isolated_row_empty():
    w = load_adjacency([("A", "B")], ["A", "B", "C"])
    assert w.matrix.nnz == 2
    np.testing.assert_array_equal(w.dense(), [[0, 1, 0], [1, 0, 0], [0, 0, 0]])


def test_both_directions_and_duplicates_collapse():
    once = load_adjacency([("A", "B")], "ABC")
    both = load_adjacency([("A", "B"), ("B", "A"), ("A", "B")], "ABC")
    np.testing.assert_array_equal(once.dense(), both.dense())


def test_random_edges_match_dense_fill():
    rng = np.random.default_rng(0)
    ids = [f"c{i}" for i in range(8)]
    pairs = [tuple(rng.choice(8, 2, replace=False)) for _ in range(10)]
    w = load_adjacency([(ids[a], ids[b]) for a, b in pairs], ids)
    dense = np.zeros((8, 8))
    for a, b in pairs:
        dense[a, b] = dense[b, a] = 1
    np.testing.assert_array_equal(w.dense(), dense)


def test_unknown_id_and_self_edge():
    with pytest.raises(InputError, match="'Z'"):
        load_adjacency([("A", "Z")], "AB")
    with pytest.warns(RuntimeWarning, match="self-edge"):
        w = load_adjacency([("A", "A"), ("A", "B")], "AB")
    assert w.dense()[0, 0] == 0


def test_edge_list_parsing():
    text = "# header\nA,B\n\nB , C  # trailing\n"
    assert read_edge_list(io.StringIO(text)) == [("A", "B"), ("B", "C")]
    with pytest.raises(InputError, match="line 1"):
        read_edge_list(io.StringIO("A;B\n"))


def test_second_order_path():
    w2 = second_order(load_adjacency([("A", "B"), ("B", "C")], "ABC")).dense()
    np.testing.assert_array_equal(w2, [[0, 0, 1], [0, 0, 0], [1, 0, 0]])


def test_second_order_triangle():
    w2 = second_order(load_adjacency([("A", "B"), ("B", "C"), ("A", "C")], "ABC")).dense()
    np.testing.assert_array_equal(w2, 1 - np.eye(3))


def test_second_order_cycle_and_complete():
    c5 = load_adjacency([(str(i), str((i + 1) % 5)) for i in range(5)], list("01234"))
    expect = np.zeros((5, 5))
    for i in range(5):
        expect[i, (i + 2) % 5] = expect[i, (i - 2) % 5] = 1
    np.testing.assert_array_equal(second_order(c5).dense(), expect)
    k5 = load_adjacency(itertools.combinations("01234", 2), list("01234"))
    np.testing.assert_array_equal(second_order(k5).dense(), 1 - np.eye(5))


def test_isolated_county_zero_in_w2():
    w2 = second_order(load_adjacency([("A", "B"), ("B", "C")], "ABCD")).dense()
    assert not w2[3].any() and not w2[:, 3].any()


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 9), st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8)), max_size=20))
def test_second_order_matches_enumeration(n, raw):
    ids = [str(i) for i in range(n)]
    edges = [(ids[a % n], ids[b % n]) for a, b in raw if a % n != b % n]
    w = load_adjacency(edges, ids)
    w2 = second_order(w).dense()
    np.testing.assert_array_equal(w2, brute_second_order(w.dense()))
    np.testing.assert_array_equal(w2, w2.T)
    assert not np.diag(w2).any()


def _panel(D):
    N, T = D.shape
    return PanelDataset(tuple(str(i) for i in range(N)), np.arange(T), "monthly", {"burn": D})


def test_zero_shock_zero_regressors():
    w = load_adjacency([("0", "1"), ("1", "2")], "012")
    out = spatial_regressors(_panel(np.zeros((3, 5))), w, second_order(w), "burn", 2)
    assert all(np.all(np.nan_to_num(v) == 0) for v in out.values())
    assert set(out) == {"W_burn", "W2_burn", "W_burn_lag1", "W_burn_lag2",
                        "W2_burn_lag1", "W2_burn_lag2"}


def test_single_burning_county():
    w = load_adjacency([("0", "1"), ("1", "2"), ("2", "3")], "0123")
    D = np.zeros((4, 6))
    D[1] = np.arange(1.0, 7.0)
    WD = spatial_lag(w, D)
    np.testing.assert_array_equal(WD[0], D[1])
    np.testing.assert_array_equal(WD[2], D[1])
    assert not WD[1].any() and not WD[3].any()


def test_dense_oracle_exact_and_linear():
    rng = np.random.default_rng(1)
    ids = [str(i) for i in range(7)]
    w = load_adjacency([(ids[a], ids[b]) for a, b in rng.integers(0, 7, (12, 2)) if a != b], ids)
    D1, D2 = rng.lognormal(size=(7, 9)), rng.lognormal(size=(7, 9))
    Wd = w.dense()
    for D in (D1, D2):
        brute = np.array([[sum(Wd[c, j] * D[j, t] for j in range(7)) for t in range(9)]
                          for c in range(7)])
        np.testing.assert_array_equal(spatial_lag(w, D), brute)
    np.testing.assert_allclose(spatial_lag(w, 2 * D1 + D2),
                               2 * spatial_lag(w, D1) + spatial_lag(w, D2), rtol=1e-14)


def test_missing_neighbour_propagates():
    w = load_adjacency([("0", "1"), ("1", "2")], "012")
    D = np.ones((3, 4))
    D[0, 2] = np.nan
    WD = spatial_lag(w, D)
    assert np.isnan(WD[1, 2])
    assert WD[2, 2] == 1 and WD[0, 2] == 1


def test_dimension_mismatch():
    w = load_adjacency([("0", "1")], "01")
    with pytest.raises(InputError):
        spatial_lag(w, np.zeros((3, 4)))
    with pytest.raises(InputError):
        spatial_regressors(_panel(np.zeros((3, 4))), w, None, "burn", 0)


def test_row_normalized_option():
    w = load_adjacency([("0", "1"), ("0", "2")], "012").row_normalized().dense()
    np.testing.assert_allclose(w.sum(axis=1), [1, 1, 1])


def _spatial_panel(neighbour_fires: bool, seed=0):
    rng = np.random.default_rng(seed)
    N, T = 12, 60
    D = np.where(rng.random((N, T)) < 0.2, rng.lognormal(1, 1, (N, T)), 0.0)
    if not neighbour_fires:
        D[:, :] = 0.0
        D[[0, 6]] = np.where(rng.random((2, T)) < 0.3, rng.lognormal(1, 1, (2, T)), 0.0)
    emp = 100 * np.exp(np.cumsum(rng.normal(0, 0.01, (N, T)) - 0.001 * D, axis=1))
    ids = tuple(f"c{i}" for i in range(N))
    # 0 and 6 have no neighbours in common and are isolated from each other
    edges = [(ids[i], ids[i + 1]) for i in range(1, 5)] + [(ids[i], ids[i + 1]) for i in range(7, 11)]
    return PanelDataset(ids, np.arange(T), "monthly", {"emp": emp, "burn": D}), \
        load_adjacency(edges, ids)


def test_zero_neighbour_burn_leaves_own_effect_unchanged():
    p, w = _spatial_panel(neighbour_fires=False)
    base = ModelSpec("emp", "burn", outcome_lags=2, shock_lags=2)
    spat = ModelSpec("emp", "burn", outcome_lags=2, shock_lags=2, spatial=SpatialRule(w, lags=2))
    b = DesignBuilder(p, spat)
    assert set(b.dropped_columns) == {"W_burn", "W2_burn", "W_burn_lag1", "W_burn_lag2",
                                      "W2_burn_lag1", "W2_burn_lag2"}
    for h in (0, 3):
        f0 = fit(DesignBuilder(p, base).design(h))
        f1 = fit(b.design(h))
        assert f1.coef[0] == f0.coef[0]
        assert f1.se[0] == f0.se[0]


def test_spatial_columns_present_with_neighbour_fires():
    p, w = _spatial_panel(neighbour_fires=True)
    d = DesignBuilder(p, ModelSpec("emp", "burn", outcome_lags=1, shock_lags=1,
                                   spatial=SpatialRule(w, lags=1))).design(0)
    assert d.columns[:3] == ("burn", "W_burn", "W2_burn")
    assert d.n_key == 3
    WD = spatial_lag(w, p["burn"])
    np.testing.assert_array_equal(d.column("W_burn"), WD[d.county, d.period])
