import itertools
import math

import numpy as np
import pytest

from ovbsens import simsel as S
from ovbsens.errors import AllDegenerate, AssumptionViolated, CapExceeded


def ref_dgp():
    """Exchangeable dgp with K = 8 used as a small reference."""
    return S.make_dgp("exchangeable", {"rho": 0.4}, 8, seed=7)


def _direct_quad(v, a):
    return float(a @ v @ a)


def test_design_counts():
    assert sum(1 for _ in S.enumerate_designs(4, 2)) == 6
    assert sum(len(b) for b in S.enumerate_batches(22, 3)) == 1540
    assert S.n_designs(22, 11) == 705_432
    assert S.n_designs(22, 19) == 1540


def test_enumeration_is_lexicographic():
    got = [tuple(np.flatnonzero(d.s)) for d in S.enumerate_designs(5, 2)]
    assert got == list(itertools.combinations(range(5), 2))
    assert all(d.d1 == 2 for d in S.enumerate_designs(5, 2))


def test_cap_exceeded():
    with pytest.raises(CapExceeded):
        next(S.enumerate_batches(40, 20))


def test_sampling_reproducible_and_full_design():
    a = np.concatenate(list(S.sample_batches(10, 4, 5000, seed=3)))
    b = np.concatenate(list(S.sample_batches(10, 4, 5000, seed=3)))
    assert np.array_equal(a, b)
    assert (a.sum(axis=1) == 4).all()
    one = next(S.sample_designs(5, 5, 1, seed=0))
    assert one.s.all()


def test_sampling_uniform_over_subsets():
    counts = {}
    for batch in S.sample_batches(6, 3, 1_000_000, seed=11):
        keys = batch @ (1 << np.arange(6))
        u, c = np.unique(keys, return_counts=True)
        for k, v in zip(u, c):
            counts[k] = counts.get(k, 0) + v
    assert len(counts) == 20
    p = 1 / 20
    sd = math.sqrt(1_000_000 * p * (1 - p))
    assert all(abs(v - 1_000_000 * p) < 3.5 * sd for v in counts.values())


def test_r_x_small_exchangeable_example():
    v = 0.5 * np.ones((4, 4)) + 0.5 * np.eye(4)
    pi = np.array([0.1, 0.2, 0.3, 0.4])
    dgp = S.SelectionDgp(4, pi, np.ones(4), v, "exchangeable", 0.5)
    s = np.array([1, 1, 0, 0], bool)
    expected = math.sqrt(_direct_quad(v, pi * ~s) / _direct_quad(v, pi * s))
    assert S.r_x_of_s(dgp, s) == pytest.approx(expected, rel=1e-14)
    generic = S.SelectionDgp(4, pi, np.ones(4), v)
    assert S.r_x_of_s(generic, s) == pytest.approx(expected, rel=1e-14)


def test_r_x_zero_and_reciprocal():
    dgp = ref_dgp()
    pi = dgp.pi.copy()
    pi[4:] = 0.0
    zero = S.SelectionDgp(8, pi, dgp.gamma, dgp.var_w)
    assert S.r_x_of_s(zero, np.arange(8) < 4) == 0.0
    for d in S.enumerate_designs(8, 3):
        prod = S.r_x_of_s(dgp, d) * S.r_x_of_s(dgp, d.complement())
        assert prod == pytest.approx(1.0, abs=1e-12)


def test_delta_orig_against_direct_forms():
    dgp = ref_dgp()
    v, pi, g = dgp.var_w, dgp.pi, dgp.gamma
    s = np.array([1, 0, 1, 1, 0, 0, 1, 0], bool)
    g1, g2 = g * s, g * ~s
    expected = (g2 @ v @ pi / (g2 @ v @ g2)) / (g1 @ v @ pi / (g1 @ v @ g1))
    assert S.delta_orig_of_s(dgp, s) == pytest.approx(expected, rel=1e-12)
    assert S.delta_orig_of_s(dgp, ~s) == pytest.approx(1 / expected, rel=1e-12)


def test_delta_orig_one_for_matching_blocks():
    pi = np.array([0.3, 0.5, 0.3, 0.5])
    dgp = S.SelectionDgp(4, pi, pi, np.eye(4))
    assert S.delta_orig_of_s(dgp, np.array([1, 1, 0, 0], bool)) == pytest.approx(1.0)


def test_delta_resid_against_explicit_projection():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(6, 6))
    v = a @ a.T / 6 + np.eye(6)
    pi, g = rng.normal(size=6), rng.normal(size=6)
    dgp = S.SelectionDgp(6, pi, g, v)
    s = np.array([1, 0, 0, 1, 1, 0], bool)
    i1, i2 = np.flatnonzero(s), np.flatnonzero(~s)
    v11, v12, v22 = v[np.ix_(i1, i1)], v[np.ix_(i1, i2)], v[np.ix_(i2, i2)]
    rho = np.linalg.solve(v11, v12 @ g[i2])
    v2perp = v22 - v12.T @ np.linalg.solve(v11, v12)
    # Cov(X, .) for the residualized W2 index and for the adjusted W1 index
    cov_x_w2perp = g[i2] @ (v12.T @ pi[i1] + v22 @ pi[i2]) - rho @ (v11 @ pi[i1] + v12 @ pi[i2])
    var_w2perp = g[i2] @ v2perp @ g[i2]
    adj = g[i1] + rho
    cov_x_w1 = adj @ (v11 @ pi[i1] + v12 @ pi[i2])
    var_w1 = adj @ v11 @ adj
    expected = (cov_x_w2perp / var_w2perp) / (cov_x_w1 / var_w1)
    assert S.delta_resid_of_s(dgp, s) == pytest.approx(expected, rel=1e-10)


def test_delta_resid_degenerate_flag():
    dgp = ref_dgp()
    g = dgp.gamma.copy()
    g[4:] = 0
    d = S.SelectionDgp(8, dgp.pi, g, dgp.var_w, "exchangeable", dgp.exch_rho)
    assert math.isnan(S.delta_resid_of_s(d, np.arange(8) < 4))


def test_exogenous_collapse():
    rng = np.random.default_rng(0)
    dgp = S.SelectionDgp(8, rng.normal(size=8), rng.normal(size=8), np.diag(rng.uniform(0.5, 2, 8)))
    _, out = S.evaluate_designs(dgp, 4)
    assert np.nanmax(np.abs(out["delta_resid"] - out["delta_orig"])) < 1e-12


def test_exchangeable_closed_form_equals_generic_path():
    dgp = ref_dgp()
    generic = S.SelectionDgp(8, dgp.pi, dgp.gamma, dgp.var_w)
    _, a = S.evaluate_designs(dgp, 3)
    _, b = S.evaluate_designs(generic, 3)
    for k in a:
        assert np.allclose(a[k], b[k], rtol=1e-11, atol=1e-13)


def test_summary_basic_properties():
    one = S.summarize(np.array([0.7]))
    assert one.min == one.p25 == one.median == one.p75 == one.max == 0.7
    s = S.summarize(np.array([0.5, 1.0, 2.0, np.inf, np.nan]))
    assert s.n == 3 and s.n_degenerate == 2
    assert s.prob_le_1 == pytest.approx(2 / 3)
    assert s.min <= s.p25 <= s.median <= s.p75 <= s.max
    with pytest.raises(AllDegenerate):
        S.summarize(np.array([np.nan, np.inf]))


def test_exact_vs_monte_carlo_summary():
    dgp = ref_dgp()
    _, exact = S.evaluate_designs(dgp, 4)
    _, mc = S.evaluate_designs(dgp, 4, draws=100_000, seed=5)
    a, b = S.summarize(exact["r_x"]), S.summarize(mc["r_x"], "monte-carlo")
    for key in ("prob_le_1", "median", "mean", "p25", "p75"):
        assert getattr(a, key) == pytest.approx(getattr(b, key), abs=0.02)


def test_threads_do_not_change_results():
    dgp = S.make_dgp("ar1", {"rho": 0.5}, 14, seed=2)
    _, a = S.evaluate_designs(dgp, 7, threads=1)
    _, b = S.evaluate_designs(dgp, 7, threads=4)
    for k in a:
        assert np.array_equal(a[k], b[k], equal_nan=True)


def test_generator_validation():
    with pytest.raises(AssumptionViolated, match="C1.1"):
        S.make_dgp("ma1", {"rho": 0.6}, 12)
    with pytest.raises(AssumptionViolated, match="C2.1"):
        S.make_dgp("ar1", {"rho": 1.0}, 12)
    with pytest.raises(AssumptionViolated, match="C3.1"):
        S.make_dgp("exchangeable", {"rho": 0.0}, 12)


def test_generator_structure():
    ar = S.make_dgp("ar1", {"rho": 0.0}, 6)
    assert np.array_equal(ar.var_w, np.eye(6))
    ex = S.make_dgp("exchangeable", {"rho": 1e-9}, 6)
    assert np.allclose(ex.var_w, np.eye(6), atol=1e-8)
    ma = S.make_dgp("ma1", {"rho": 0.3}, 6)
    assert ma.var_w[0, 1] == 0.3 and ma.var_w[0, 2] == 0.0
    fac = S.make_dgp("factor", {"R": 2, "sigma_e2": 0.5}, 6, seed=1)
    assert np.all(np.linalg.eigvalsh(fac.var_w) > 0.5 - 1e-12)
    for d in (ar, ma, fac):
        var = d.pi @ d.var_w @ d.pi
        assert 1 / S.VARIANCE_BOUND_D < var < S.VARIANCE_BOUND_D
        assert d.validity


def test_rx_limit():
    assert S.rx_limit(1.0, 0.7) == 1.0
    assert S.rx_limit(2.0, 0.0) == 2.0
    grid = np.linspace(0.1, 5, 50)
    for c in (0.0, 0.5, 2.0):
        vals = [S.rx_limit(r, c) for r in grid]
        assert all(b > a for a, b in zip(vals, vals[1:]))


def test_delta_nonconv_construction():
    d = S.make_dgp_delta_nonconv(2.0, 1.0, 0.5, 10)
    assert d.params["C_prime"] == 2.5
    assert np.allclose(d.gamma, [0, 0.2] * 5)
    assert np.allclose(d.pi, [2 * (1 - 2.5) / 10, 2 * 2.5 / 10] * 5)
    assert S.make_dgp_delta_nonconv(1.0, 1.0, 0.5, 10).params["C_prime"] == 1.0
    assert S.make_dgp_delta_nonconv(0.0, 1.0, 0.5, 10).params["C_prime"] == -0.5


def test_dgp_from_model(ref):
    d = S.dgp_from_model(ref)
    assert np.allclose(d.pi, [0.4, 0.1])
    assert S.r_x_of_s(d, np.array([1, 0], bool)) == pytest.approx(0.25)
