import json

import numpy as np
import pytest

from windemos.dists import GevDist, TruncatedNormal
from windemos.estimation import (
    GEV_DEFAULT,
    TN_DEFAULT,
    FittedModel,
    GevCoefficients,
    InsufficientDataError,
    TnCoefficients,
    TrainingSet,
    ensemble_summaries,
    fit_gev_ml,
    fit_regime_switching,
    fit_tn_min_crps,
    gev_objective,
    tn_objective,
)


def tn_params(c: TnCoefficients):
    return np.array([c.a, c.b, np.sqrt(c.c), np.sqrt(c.d)])


def tn_data(seed, n=2000, coef=(0.5, 1.1, 0.8, 1.3)):
    rng = np.random.default_rng(seed)
    x = rng.uniform(1, 12, n)
    s2 = rng.uniform(0, 4, n)
    a, b, c, d = coef
    y = TruncatedNormal(a + b * x, np.sqrt(c + d * s2)).rvs(rng=rng)
    return TrainingSet(x, s2, x, y)


def gev_data(seed, n=2000, coef=(0.3, 1.0, 0.5, 0.1, 0.1)):
    rng = np.random.default_rng(seed)
    x = rng.uniform(1, 12, n)
    mu0, mu1, s0, s1, xi = coef
    y = GevDist(mu0 + mu1 * x, s0 + s1 * x, np.full(n, xi)).rvs(rng=rng)
    return TrainingSet(x, rng.uniform(0, 4, n), x, y)


# summaries

def test_ensemble_summaries_examples():
    assert ensemble_summaries([1.0, 2.0, 3.0]) == pytest.approx((2.0, 2.0 / 3.0, 2.0))
    assert ensemble_summaries([5.0, 5.0, 5.0, 5.0]) == (5.0, 0.0, 5.0)


def test_ensemble_summaries_median_even_k():
    x = np.random.default_rng(0).normal(6, 2, 50)
    s = np.sort(x)
    _, _, med = ensemble_summaries(x)
    assert med == pytest.approx(0.5 * (s[24] + s[25]), abs=1e-15)


def test_ensemble_summaries_batched():
    m = np.array([[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]])
    xb, s2, med = ensemble_summaries(m)
    np.testing.assert_allclose(xb, [2.0, 5.0])
    np.testing.assert_allclose(s2, [2.0 / 3.0, 0.0])


def test_ensemble_summaries_needs_two_members():
    with pytest.raises(ValueError):
        ensemble_summaries([1.0])


def test_training_set_validation():
    with pytest.raises(ValueError):
        TrainingSet(np.array([1.0]), np.array([1.0]), np.array([1.0]), np.array([-1.0]))
    with pytest.raises(ValueError):
        TrainingSet(np.array([np.nan]), np.array([1.0]), np.array([1.0]), np.array([1.0]))


# truncated normal fit

def test_tn_fit_beats_default_and_init():
    train = tn_data(1)
    init = TnCoefficients(1.0, 0.8, 2.0, 0.5)
    m = fit_tn_min_crps(train, init=init, rng=0)
    assert m.converged and m.kind == "tn" and m.n_train == len(train)
    assert m.objective <= tn_objective(tn_params(TN_DEFAULT), train)
    assert m.objective <= tn_objective(tn_params(init), train)
    assert m.coefficients.c >= 0 and m.coefficients.d >= 0


def test_tn_fit_local_optimality():
    train = tn_data(2)
    m = fit_tn_min_crps(train, rng=0)
    p = tn_params(m.coefficients)
    rng = np.random.default_rng(3)
    for _ in range(100):
        q = p + rng.normal(0, 0.01, 4)
        assert tn_objective(q, train) >= m.objective - 1e-10


def test_tn_fit_recovers_coefficients():
    c = fit_tn_min_crps(tn_data(4, n=5000), rng=0).coefficients
    assert np.abs(np.array([c.a, c.b, c.c, c.d]) - [0.5, 1.1, 0.8, 1.3]).max() < 0.15


def test_tn_warm_start_matches_cold():
    for seed in range(3):
        train = tn_data(10 + seed)
        cold = fit_tn_min_crps(train, rng=seed)
        c = cold.coefficients
        nudged = TnCoefficients(c.a + 0.2, c.b - 0.05, c.c * 1.3, c.d * 0.8)
        warm = fit_tn_min_crps(train, init=nudged, rng=seed + 100)
        assert abs(warm.objective - cold.objective) <= 1e-6 * cold.objective


def test_tn_degenerate_fit():
    rng = np.random.default_rng(5)
    x = rng.uniform(2, 12, 500)
    train = TrainingSet(x, np.full(500, 0.7), x, x.copy())
    c = fit_tn_min_crps(train, rng=0).coefficients
    med = TruncatedNormal(c.a + c.b * x, np.sqrt(c.c + c.d * 0.7)).median()
    assert np.abs(med - x).max() < 0.05


def test_tn_fit_insufficient_data():
    with pytest.raises(InsufficientDataError):
        fit_tn_min_crps(tn_data(0, n=50))
    fit_tn_min_crps(tn_data(0, n=50), n_min=20)


# GEV fit

def test_gev_fit_support_and_likelihood():
    train = gev_data(6)
    m = fit_gev_ml(train, rng=0)
    c = m.coefficients
    mu, sigma = c.mu0 + c.mu1 * train.x_bar, c.sigma0 + c.sigma1 * train.x_bar
    assert np.all(sigma > 0)
    assert np.min(1 + c.xi * (train.y - mu) / sigma) > 0
    # in-sample ML dominates the truth
    assert m.objective <= gev_objective(np.array([0.3, 1.0, 0.5, 0.1, 0.1]), train) + 1e-9
    assert m.objective <= gev_objective(GEV_DEFAULT.as_array(), train)


def test_gev_objective_matches_scipy_loglik():
    from scipy import stats
    train = gev_data(7, n=300)
    p = np.array([0.2, 0.9, 0.6, 0.12, 0.15])
    mu, sigma = p[0] + p[1] * train.x_bar, p[2] + p[3] * train.x_bar
    ll = stats.genextreme(-p[4], loc=mu, scale=sigma).logpdf(train.y)
    assert gev_objective(p, train) == pytest.approx(-ll.mean(), rel=1e-10)


def test_gev_objective_penalizes_infeasible():
    train = gev_data(8, n=300)
    bad = np.array([20.0, 0.0, 0.5, 0.0, 0.5])  # lower bound at 19, above most y
    assert gev_objective(bad, train) >= 1e3


def test_gev_fit_gumbel_truth():
    m = fit_gev_ml(gev_data(9, n=10000, coef=(0.5, 1.0, 0.6, 0.08, 0.0)), rng=0)
    assert abs(m.coefficients.xi) < 0.05


def test_gev_fit_recovers_coefficients():
    c = fit_gev_ml(gev_data(10, n=5000), rng=0).coefficients
    assert np.abs(np.array([c.mu0, c.mu1, c.sigma0, c.sigma1]) - [0.3, 1.0, 0.5, 0.1]).max() < 0.1
    assert abs(c.xi - 0.1) < 0.05


def test_fitted_model_json_round_trip():
    m = fit_gev_ml(gev_data(11, n=300), rng=0)
    m.window_end = "2010-03-01"
    m.strata = {"tn": 0, "gev": 300}
    back = FittedModel.from_dict(json.loads(json.dumps(m.to_dict())))
    assert back == m


# regime switching

def test_regime_split_uses_strata():
    rng = np.random.default_rng(12)
    x = rng.uniform(1, 12, 1200)
    y = TruncatedNormal(x + 1.0, np.full(1200, 1.0)).rvs(rng=rng)
    train = TrainingSet(x, rng.uniform(0, 2, 1200), x, y)
    tn, gev = fit_regime_switching(train, 7.5, rng=0)
    low = int((x < 7.5).sum())
    assert tn.n_train == low and gev.n_train == 1200 - low
    assert tn.source == gev.source == "fit"
    assert tn.strata == {"tn": low, "gev": 1200 - low}


def test_regime_boundary_goes_to_gev():
    x = np.array([7.5] * 150 + [3.0] * 150) + np.r_[np.zeros(150), np.linspace(0, 1, 150)]
    y = np.abs(x + np.random.default_rng(0).normal(0, 1, 300))
    tn, gev = fit_regime_switching(TrainingSet(x, np.ones(300), x, y), 7.5, rng=0)
    assert gev.n_train == 150 and tn.n_train == 150


def test_regime_theta_zero_falls_back_to_full():
    train = tn_data(13, n=400)
    tn, gev = fit_regime_switching(train, 0.0, rng=0)
    assert tn.source == "full" and tn.n_train == 400
    assert gev.source == "fit" and gev.n_train == 400


def test_regime_theta_infinite_is_tn_only():
    train = tn_data(14, n=400)
    tn, gev = fit_regime_switching(train, np.inf, rng=0)
    assert tn.source == "fit" and tn.n_train == 400
    assert gev.source == "full"


def test_regime_prefers_previous_window():
    train = tn_data(15, n=400)
    prev_tn, prev_gev = fit_regime_switching(tn_data(16, n=400), 7.0, rng=0)
    tn, gev = fit_regime_switching(train, np.inf, previous=(prev_tn, prev_gev), rng=0)
    assert gev.source == "previous"
    assert gev.coefficients == prev_gev.coefficients


def test_regime_exhausted_fallbacks():
    with pytest.raises(InsufficientDataError):
        fit_regime_switching(tn_data(17, n=60), 7.0)
