import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from windemos.dists import EmpiricalEnsemble, GevDist, RegimeSwitching, TruncatedNormal
from windemos.scoring import (
    InfiniteMeanError,
    ScoreRow,
    ScoreTable,
    Weight,
    central_interval,
    coverage_width,
    crps,
    crps_quadrature,
    log_score,
    mae,
    mean_log_score,
    pit,
    pit_histogram,
    rank_histogram,
    twcrps,
    twcrpss,
    verification_ranks,
)


def normal_crps(mu, sigma, y):
    z = (y - mu) / sigma
    return sigma * (z * (2 * stats.norm.cdf(z) - 1) + 2 * stats.norm.pdf(z) - 1 / math.sqrt(math.pi))


def brute_ensemble_crps(members, y):
    # integral of (F_k(z) - 1{y <= z})^2 between consecutive breakpoints
    pts = np.sort(np.append(members, y))
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        mid = 0.5 * (a + b)
        f = np.mean(members <= mid)
        total += (f - (y <= mid)) ** 2 * (b - a)
    return total


# CRPS

def test_ensemble_crps_examples():
    assert crps(EmpiricalEnsemble(np.array([3.7])), 3.7) == 0.0
    assert crps(EmpiricalEnsemble(np.array([0.0, 2.0])), 1.0) == pytest.approx(0.5, abs=1e-15)


def test_ensemble_crps_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(100):
        k = rng.integers(1, 12)
        x = rng.gamma(2.0, 2.0, k)
        y = rng.gamma(2.0, 2.0)
        assert crps(EmpiricalEnsemble(x), y) == pytest.approx(brute_ensemble_crps(x, y), abs=1e-10)


def test_tn_crps_example_against_quadrature():
    d = TruncatedNormal(5.0, 2.0)
    assert crps(d, 5.0) == pytest.approx(crps_quadrature(d, 5.0), abs=1e-6)


def test_tn_crps_normal_limit():
    # truncation mass is below 1e-20 here, so the normal closed form applies
    for mu, sigma, y in [(50.0, 1.0, 49.0), (30.0, 2.5, 33.0), (20.0, 0.5, 20.0)]:
        assert crps(TruncatedNormal(mu, sigma), y) == pytest.approx(normal_crps(mu, sigma, y), abs=1e-12)


def test_gev_crps_gumbel_limit_continuous():
    for y in (-1.0, 0.5, 4.0):
        a = crps(GevDist(1.0, 2.0, 1e-7), y)
        b = crps(GevDist(1.0, 2.0, 0.0), y)
        assert a == pytest.approx(b, abs=1e-6)


def test_closed_forms_match_quadrature():
    rng = np.random.default_rng(4)
    for _ in range(150):
        tn = TruncatedNormal(rng.uniform(-5, 15), rng.uniform(0.1, 10))
        y = max(0.0, rng.uniform(-2, 25))
        assert abs(crps(tn, y) - crps_quadrature(tn, y)) < 1e-6
        gev = GevDist(rng.uniform(-5, 15), rng.uniform(0.1, 5), rng.uniform(-0.4, 0.9))
        y = rng.uniform(-5, 30)
        assert abs(crps(gev, y) - crps_quadrature(gev, y)) < 1e-6


def test_vectorized_crps_matches_scalar():
    mu, sigma = np.array([1.0, 4.0, 8.0]), np.array([0.5, 1.0, 3.0])
    y = np.array([0.3, 5.0, 2.0])
    vec = crps(TruncatedNormal(mu, sigma), y)
    for i in range(3):
        assert vec[i] == crps(TruncatedNormal(mu[i], sigma[i]), y[i])


def test_gev_infinite_mean():
    with pytest.raises(InfiniteMeanError):
        crps(GevDist(0.0, 1.0, 1.0), 1.0)


def test_regime_crps_dispatches_by_branch():
    tn = TruncatedNormal(np.array([3.0]), np.array([1.0]))
    gev = GevDist(np.array([9.0]), np.array([2.0]), np.array([0.2]))
    f = RegimeSwitching(np.array([True, False]), tn, gev)
    y = np.array([10.0, 2.0])
    np.testing.assert_allclose(crps(f, y), [crps(gev, 10.0)[0], crps(tn, 2.0)[0]])


# threshold-weighted CRPS

def test_constant_weight_equals_crps():
    rng = np.random.default_rng(5)
    for _ in range(50):
        d = GevDist(rng.uniform(0, 10), rng.uniform(0.5, 3), rng.uniform(-0.3, 0.6))
        y = rng.uniform(0, 15)
        assert abs(twcrps(d, y, Weight.constant()) - crps(d, y)) < 1e-9


def test_indicator_far_above_support_vanishes():
    d = GevDist(3.0, 1.0, -0.2)  # upper bound at 8
    assert crps_quadrature(d, 4.0, Weight.indicator(50.0)) < 1e-9
    assert twcrps(d, 4.0, Weight.indicator(50.0)) < 1e-9


def test_indicator_at_zero_inactive_for_tn():
    d = TruncatedNormal(0.0, 1.0)
    assert crps_quadrature(d, 1.0, Weight.indicator(0.0)) == pytest.approx(crps(d, 1.0), abs=1e-8)
    assert twcrps(d, 1.0, Weight.indicator(0.0)) == pytest.approx(crps(d, 1.0), abs=1e-12)


def test_indicator_closed_forms_match_quadrature():
    rng = np.random.default_rng(6)
    for _ in range(60):
        r = rng.uniform(2, 16)
        tn = TruncatedNormal(rng.uniform(-2, 12), rng.uniform(0.3, 4))
        gev = GevDist(rng.uniform(0, 10), rng.uniform(0.5, 3), rng.uniform(-0.3, 0.8))
        ens = EmpiricalEnsemble(rng.gamma(3.0, 2.0, 20))
        y = rng.uniform(0, 20)
        for d in (tn, gev, ens):
            w = Weight.indicator(r)
            assert twcrps(d, y, w) == pytest.approx(crps_quadrature(d, y, w), abs=1e-6)


@given(st.floats(0.5, 15), st.floats(0.2, 5), st.floats(0, 25), st.floats(0, 20), st.floats(0, 5))
def test_twcrps_nonincreasing_in_threshold(mu, sigma, y, r, dr):
    d = TruncatedNormal(mu, sigma)
    lo = twcrps(d, y, Weight.indicator(r))
    hi = twcrps(d, y, Weight.indicator(r + dr))
    assert hi <= lo + 1e-12


def test_gaussian_weight_approaches_indicator():
    d = GevDist(6.0, 2.0, 0.2)
    for y, r in [(4.0, 8.0), (11.0, 9.0), (15.0, 12.0)]:
        smooth = twcrps(d, y, Weight.gaussian_cdf(r, 1e-4))
        sharp = crps_quadrature(d, y, Weight.indicator(r))
        assert smooth == pytest.approx(sharp, abs=1e-4)


def test_gaussian_weight_single_forecast_many_observations():
    # a shared forecast (climatology) scored against a vector of outcomes
    f = EmpiricalEnsemble(np.array([2.0, 5.0, 7.0, 9.0]))
    y = np.array([3.0, 8.0, 12.0])
    w = Weight.gaussian_cdf(8.0, 1.5)
    got = twcrps(f, y, w)
    assert got.shape == (3,)
    assert got.tolist() == pytest.approx([crps_quadrature(f, v, w) for v in y])


def test_weight_validation():
    with pytest.raises(ValueError):
        Weight.gaussian_cdf(5.0, 0.0)
    assert Weight.indicator(3.0)(np.array([2.0, 3.0, 4.0])).tolist() == [0.0, 1.0, 1.0]


def test_twcrpss():
    s = np.array([0.3, 0.1, 0.7])
    assert twcrpss(s, s) == 0.0
    assert twcrpss(0.5 * s, s) == pytest.approx(0.5)
    assert twcrpss(2 * s, s) < 0
    with pytest.raises(ZeroDivisionError):
        twcrpss(s, np.zeros(3))


# logarithmic score

def test_log_score_examples():
    assert log_score(TruncatedNormal(0.0, 1.0), -1.0) == math.inf
    assert log_score(GevDist(0.0, 1.0, 0.0), 0.0) == pytest.approx(1.0, abs=1e-15)
    expect = -math.log(2 * stats.norm.pdf(0.5))
    assert log_score(TruncatedNormal(0.0, 1.0), 0.5) == pytest.approx(expect, abs=1e-14)


def test_log_score_ensemble_has_no_density():
    with pytest.raises(TypeError):
        log_score(EmpiricalEnsemble(np.array([1.0, 2.0])), 1.5)


def test_mean_log_score_excludes_infinite():
    mean, n_inf = mean_log_score(np.array([1.0, np.inf, 3.0]))
    assert mean == 2.0 and n_inf == 1


# point and interval summaries

def test_mae_perfect_point_forecast():
    y = np.array([1.0, 4.0, 7.5])
    assert mae(EmpiricalEnsemble(np.repeat(y[:, None], 5, axis=1)), y) == 0.0


def test_mae_empty_raises():
    with pytest.raises(ValueError):
        mae(TruncatedNormal(np.array([]), np.array([])), np.array([]))


def test_coverage_closed_interval():
    d = TruncatedNormal(5.0, 2.0)
    lo, hi = central_interval(d)
    cov, width = coverage_width(TruncatedNormal(np.full(3, 5.0), np.full(3, 2.0)), np.array([lo, hi, hi + 1e-9]))
    assert cov == pytest.approx(200 / 3)
    assert width == pytest.approx(hi - lo)


def test_coverage_calibrated_forecaster():
    rng = np.random.default_rng(7)
    n = 20000
    d = TruncatedNormal(rng.uniform(0, 10, n), rng.uniform(0.5, 3, n))
    y = d.rvs(rng=rng)
    cov, _ = coverage_width(d, y)
    assert 78.0 <= cov <= 82.0


def test_ensemble_interval_type7():
    x = np.arange(1.0, 11.0)
    lo, hi = central_interval(EmpiricalEnsemble(x))
    assert (lo, hi) == (pytest.approx(np.quantile(x, 0.1)), pytest.approx(np.quantile(x, 0.9)))


# calibration

def test_pit_below_support():
    assert pit(TruncatedNormal(2.0, 1.0), 0.0) == 0.0


@pytest.mark.parametrize("dist", [TruncatedNormal(np.full(10000, 3.0), np.full(10000, 2.0)),
                                  GevDist(np.full(10000, 5.0), np.full(10000, 1.5), np.full(10000, 0.2))])
def test_pit_uniform_for_true_law(dist):
    y = dist.rvs(rng=np.random.default_rng(8))
    res = stats.kstest(pit(dist, y), "uniform")
    assert res.pvalue > 0.01


def test_rank_tie_randomization():
    members = np.tile(np.array([1.0, 2.0, 3.0, 4.0]), (20000, 1))
    ranks = verification_ranks(members, np.ones(20000), rng=9)
    assert set(np.unique(ranks)) == {1, 2}
    assert abs(np.mean(ranks == 1) - 0.5) < 3 * 0.5 / math.sqrt(20000)


def test_rank_histogram_counts():
    members = np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]])
    h = rank_histogram(members, np.array([0.5, 1.5, 9.0]), rng=0)
    assert h.count.tolist() == [1, 1, 1]
    assert h.expected.tolist() == [1.0, 1.0, 1.0]


def test_pit_histogram_csv():
    h = pit_histogram(np.array([0.01, 0.02, 0.5, 0.99]), bins=4)
    lines = h.to_csv().splitlines()
    assert lines[0] == "bin_low,bin_high,count,expected"
    assert lines[1] == "0.0,0.25,2,1.0"
    assert len(lines) == 5
    with pytest.raises(ValueError):
        pit_histogram(np.array([1.2]))


def test_propriety_smoke():
    rng = np.random.default_rng(10)
    truth = TruncatedNormal(5.0, 2.0)
    y = truth.rvs(size=100000, rng=rng)
    s0 = crps(TruncatedNormal(np.full(y.size, 5.0), np.full(y.size, 2.0)), y)
    for _ in range(20):
        mu, sigma = 5.0 + rng.normal(0, 0.5), 2.0 * math.exp(rng.normal(0, 0.2))
        s1 = crps(TruncatedNormal(np.full(y.size, mu), np.full(y.size, sigma)), y)
        diff = s1 - s0
        assert diff.mean() >= -3 * diff.std() / math.sqrt(y.size)


# score table

def _table():
    rows = [ScoreRow("tn", 1.05, 1.39, 80.4, 4.0, {10.0: 0.2, 12.0: 0.1, 15.0: 0.03}, 120),
            ScoreRow("gev", 1.1, 1.4, 83.0, 4.3, {10.0: 0.21, 12.0: 0.11, 15.0: 0.031}, 120)]
    return ScoreTable(rows)


def test_score_table_columns_and_round_trip():
    t = _table()
    assert t.columns == ["forecaster", "crps", "mae", "coverage80", "width80",
                         "twcrps_r10", "twcrps_r12", "twcrps_r15", "n_cases"]
    back = ScoreTable.from_csv(t.to_csv())
    assert back.to_csv() == t.to_csv()
    assert back["gev"].twcrps[12.0] == 0.11
    doc = json.loads(t.to_json())
    assert doc["columns"] == t.columns and doc["rows"][0]["n_cases"] == 120


def test_score_row_means_are_order_independent():
    rng = np.random.default_rng(11)
    v = rng.lognormal(0, 2, 10001)
    a = ScoreRow.from_cases("x", v, v, v > 1, v)
    b = ScoreRow.from_cases("x", v[::-1], v[::-1], (v > 1)[::-1], v[::-1])
    assert a == b
    assert a.n_cases == 10001
