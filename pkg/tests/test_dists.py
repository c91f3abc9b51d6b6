import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, optimize, stats

from windemos.dists import EmpiricalEnsemble, GevDist, RegimeSwitching, TruncatedNormal

PROBS = np.array([0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99])

tn_params = st.tuples(st.floats(-5, 15), st.floats(0.1, 10))
gev_params = st.tuples(st.floats(-5, 15), st.floats(0.1, 5), st.floats(-0.4, 0.9))


# truncated normal

def test_tn_cdf_examples():
    d = TruncatedNormal(0.0, 1.0)
    assert d.cdf(0.0) == 0.0
    assert d.cdf(1e6) == 1.0
    assert d.cdf(1.0) == pytest.approx(2 * stats.norm.cdf(1.0) - 1, abs=1e-14)


def test_tn_cdf_matches_integrated_density():
    d = TruncatedNormal(0.0, 1.0)
    val, _ = integrate.quad(lambda z: 2 * stats.norm.pdf(z), 0, 1, epsabs=1e-13)
    assert d.cdf(1.0) == pytest.approx(val, abs=1e-12)


def test_tn_median_half_normal():
    d = TruncatedNormal(0.0, 1.0)
    oracle = optimize.brentq(lambda z: d.cdf(z) - 0.5, 1e-6, 10, xtol=1e-14)
    assert d.quantile(0.5) == pytest.approx(stats.norm.ppf(0.75), abs=1e-12)
    assert d.median() == pytest.approx(oracle, abs=1e-10)


def test_tn_pdf_zero_outside_support():
    d = TruncatedNormal(3.0, 2.0)
    assert d.pdf(0.0) == 0.0
    assert d.pdf(-1.0) == 0.0
    assert np.isneginf(d.logpdf(-1.0))


def test_tn_errors():
    with pytest.raises(ValueError):
        TruncatedNormal(0.0, 0.0)
    with pytest.raises(ValueError):
        TruncatedNormal(0.0, 1.0).cdf(np.nan)
    for p in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            TruncatedNormal(0.0, 1.0).quantile(p)


@given(tn_params)
def test_tn_quantile_inversion(params):
    d = TruncatedNormal(*params)
    assert np.max(np.abs(d.cdf(d.quantile(PROBS)) - PROBS)) < 1e-8


@given(tn_params, st.floats(-20, 40), st.floats(0, 10))
def test_tn_cdf_monotone_and_bounded(params, z, dz):
    d = TruncatedNormal(*params)
    lo, hi = d.cdf(z), d.cdf(z + dz)
    assert 0.0 <= lo <= hi <= 1.0
    assert d.cdf(0.0) == 0.0


@pytest.mark.parametrize("mu,sigma", [(-3.0, 1.0), (0.0, 0.3), (5.0, 2.0), (12.0, 0.5)])
def test_tn_normalization(mu, sigma):
    d = TruncatedNormal(mu, sigma)
    q = d.quantile(np.array([1e-12, 0.5, 1 - 1e-12]))
    total = sum(integrate.quad(d.pdf, a, b, epsabs=1e-13, epsrel=1e-12)[0]
                for a, b in [(0.0, q[1]), (q[1], q[2] + 10 * sigma)])
    assert total == pytest.approx(1.0, abs=1e-8)


def test_tn_against_scipy_truncnorm():
    rng = np.random.default_rng(1)
    mu, sigma = rng.uniform(-5, 15, 50), rng.uniform(0.1, 10, 50)
    z = rng.uniform(0, 20, 50)
    ref = stats.truncnorm(-mu / sigma, np.inf, loc=mu, scale=sigma)
    d = TruncatedNormal(mu, sigma)
    np.testing.assert_allclose(d.cdf(z), ref.cdf(z), atol=1e-12)
    np.testing.assert_allclose(d.pdf(z), ref.pdf(z), rtol=1e-9, atol=1e-300)


# GEV

def test_gev_cdf_examples():
    assert GevDist(0.0, 1.0, 0.0).cdf(0.0) == pytest.approx(math.exp(-1), abs=1e-15)
    assert GevDist(0.0, 1.0, 0.5).cdf(-2.0) == 0.0
    assert GevDist(0.0, 1.0, 0.2).cdf(1.0) == pytest.approx(math.exp(-(1.2 ** -5)), abs=1e-14)
    assert GevDist(0.0, 1.0, 0.2).cdf(1.0) == pytest.approx(0.6690626526678188, abs=1e-15)


def test_gev_cdf_upper_bound_negative_shape():
    d = GevDist(0.0, 1.0, -0.25)
    assert d.cdf(4.0) == 1.0
    assert d.cdf(10.0) == 1.0
    assert d.pdf(10.0) == 0.0


def test_gev_quantile_gumbel_location():
    assert GevDist(0.0, 1.0, 0.0).quantile(math.exp(-1)) == pytest.approx(0.0, abs=1e-14)


def test_gev_pdf_outside_support():
    d = GevDist(0.0, 1.0, 0.5)
    assert d.pdf(-2.5) == 0.0
    assert d.support() == (pytest.approx(-2.0), np.inf)


def test_gev_neg_prob():
    d = GevDist(10.0, 2.0, 0.1)
    assert d.neg_prob() == d.cdf(0.0)
    assert d.neg_prob() < 0.01


@given(gev_params)
def test_gev_quantile_inversion(params):
    d = GevDist(*params)
    assert np.max(np.abs(d.cdf(d.quantile(PROBS)) - PROBS)) < 1e-8


@given(gev_params, st.floats(-20, 40), st.floats(0, 10))
def test_gev_cdf_monotone(params, z, dz):
    d = GevDist(*params)
    assert 0.0 <= d.cdf(z) <= d.cdf(z + dz) <= 1.0


def test_gev_gumbel_continuity():
    z = np.linspace(-5, 20, 2001)
    gap = np.abs(GevDist(1.0, 2.0, 1e-9).cdf(z) - GevDist(1.0, 2.0, 0.0).cdf(z))
    assert gap.max() < 1e-6


def test_gev_against_scipy():
    rng = np.random.default_rng(2)
    mu, sigma, xi = rng.uniform(-5, 15, 50), rng.uniform(0.1, 5, 50), rng.uniform(-0.4, 0.9, 50)
    z = rng.uniform(-5, 30, 50)
    # scipy's shape parameter has the opposite sign
    ref = stats.genextreme(-xi, loc=mu, scale=sigma)
    d = GevDist(mu, sigma, xi)
    np.testing.assert_allclose(d.cdf(z), ref.cdf(z), atol=1e-12)
    np.testing.assert_allclose(d.pdf(z), ref.pdf(z), rtol=1e-8, atol=1e-300)


@pytest.mark.parametrize("xi", [-0.3, 0.0, 0.2, 0.6])
def test_gev_normalization(xi):
    d = GevDist(2.0, 1.5, xi)
    lo, hi = d.quantile(np.array([1e-14, 1 - 1e-10]))
    pieces = np.linspace(lo, min(hi, 1e4), 40)
    total = sum(integrate.quad(d.pdf, a, b, epsabs=1e-14)[0] for a, b in zip(pieces[:-1], pieces[1:]))
    tail = 1.0 - d.cdf(pieces[-1])
    assert total + tail == pytest.approx(1.0, abs=1e-8)


def test_gev_rejects_bad_scale():
    with pytest.raises(ValueError):
        GevDist(0.0, -1.0, 0.1)


# ensemble and regime mixture

def test_ensemble_cdf_and_quantile():
    e = EmpiricalEnsemble(np.array([3.0, 1.0, 2.0, 4.0]))
    assert e.cdf(2.0) == 0.5
    assert e.cdf(0.5) == 0.0
    assert e.median() == pytest.approx(2.5)
    # type 7 quantiles
    assert e.quantile(0.1) == pytest.approx(np.quantile([1, 2, 3, 4], 0.1))


def test_regime_switching_picks_branches():
    # each branch holds only the cases routed to it
    tn = TruncatedNormal(np.array([2.0, 3.0]), np.array([1.0, 1.0]))
    gev = GevDist(np.array([9.0]), np.array([1.0]), np.array([0.1]))
    f = RegimeSwitching(np.array([False, True, False]), tn, gev)
    z = np.array([2.5, 9.5, 1.0])
    expect = [tn.cdf(z[[0, 2]])[0], gev.cdf(z[[1]])[0], tn.cdf(z[[0, 2]])[1]]
    np.testing.assert_array_equal(f.cdf(z), expect)
    with pytest.raises(ValueError):
        RegimeSwitching(np.array([True, True]), tn, gev)
