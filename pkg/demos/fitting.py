"""Fitting the regressions on pooled training pairs.

Run with ``python demos/fitting.py``. Plants known coefficients, refits
them, and shows how the regime split routes cases.
"""
import numpy as np

from windemos.dists import GevDist, TruncatedNormal
from windemos.estimation import TrainingSet, fit_gev_ml, fit_regime_switching, fit_tn_min_crps
from windemos.models import predict_regime

rng = np.random.default_rng(7)
n = 5000
x_bar = rng.uniform(1, 12, n)
s2 = rng.uniform(0, 4, n)

# Truncated normal data with mu = 0.5 + 1.1 x_bar and var = 0.8 + 1.3 s2.
y = TruncatedNormal(0.5 + 1.1 * x_bar, np.sqrt(0.8 + 1.3 * s2)).rvs(rng=rng)
tn = fit_tn_min_crps(TrainingSet(x_bar, s2, x_bar, y), rng=0)
print("minimum-CRPS fit:", tn.coefficients, f"mean CRPS {tn.objective:.4f}, {tn.n_evals} evaluations")

# GEV data with mu = 0.3 + x_bar, sigma = 0.5 + 0.1 x_bar and xi = 0.1.
yg = GevDist(0.3 + x_bar, 0.5 + 0.1 * x_bar, np.full(n, 0.1)).rvs(rng=rng)
gev = fit_gev_ml(TrainingSet(x_bar, s2, x_bar, yg), rng=0)
print("maximum-likelihood fit:", gev.coefficients, f"mean NLL {gev.objective:.4f}")

# Regime switching: the TN branch learns from cases with a low ensemble
# median, the GEV branch from the rest. Here the data switch law at 8.
high = x_bar >= 8.0
y_mix = np.where(high, yg, y)
r_tn, r_gev = fit_regime_switching(TrainingSet(x_bar, s2, x_bar, y_mix), theta=8.0, rng=0)
print(f"strata {r_tn.strata}; TN branch {r_tn.coefficients}")
print(f"GEV branch {r_gev.coefficients}")

# Predicting for three new ensembles, one on the boundary.
members = np.array([[4.0, 5.0, 6.0], [7.0, 8.0, 9.0], [9.0, 11.0, 13.0]])
f = predict_regime(r_tn, r_gev, 8.0, members)
print("GEV branch used:", f.use_gev.tolist(), " medians:", np.round(f.median(), 2).tolist())
