"""Choosing the regime threshold on an out-of-sample period.

Run with ``python demos/threshold.py``. The generator switches law at a
known ensemble-scale threshold; the grid search should find it.
"""
import numpy as np

from windemos.data import SyntheticSpec, generate_synthetic
from windemos.models import ExperimentConfig, select_theta

planted = 6.5
data = generate_synthetic(SyntheticSpec(n_stations=25, n_days=75, regime_theta=planted, seed=2))
grid = np.arange(5.0, 9.01, 0.5)
theta, thetas, scores = select_theta(data, ExperimentConfig(window_days=30), theta_grid=grid)

for t, s in zip(thetas, scores):
    bar = "#" * int(round(4000 * (s - scores.min())))
    print(f"theta {t:4.1f}  mean CRPS {s:.4f}  {bar}")
print(f"planted {planted}, selected {theta}")
