"""Scoring a wind forecast: closed forms, quadrature and tail weights.

Run with ``python demos/scores.py``.
"""
import numpy as np

from windemos import EmpiricalEnsemble, GevDist, TruncatedNormal, Weight, crps, crps_quadrature, twcrps, twcrpss
from windemos.scoring import coverage_width, log_score, pit

# A calm-day forecast (truncated normal) and a stormy one (heavy-tailed GEV).
calm = TruncatedNormal(4.0, 1.5)
storm = GevDist(11.0, 2.5, 0.2)
y = 6.3

# The closed forms agree with brute-force integration of the definition.
for name, f in (("calm", calm), ("storm", storm)):
    print(f"{name:5s} CRPS closed {crps(f, y):.10f}  quadrature {crps_quadrature(f, y):.10f}")

# Raw ensembles are scored with the kernel formula.
members = np.array([3.1, 3.9, 4.4, 4.8, 5.0, 5.6])
print(f"ensemble CRPS {crps(EmpiricalEnsemble(members), y):.4f}")

# Threshold weighting keeps only the part of the integral above r, so a
# score at r = 10 rewards forecasters that get the storm tail right.
for r in (6.0, 10.0, 14.0):
    w = Weight.indicator(r)
    print(f"twCRPS r={r:4.1f}: calm {twcrps(calm, y, w):.4f}  storm {twcrps(storm, y, w):.4f}")

# A smooth Gaussian-CDF weight tends to the indicator as its width shrinks.
for s in (2.0, 0.5, 1e-3):
    print(f"Gaussian weight sd {s:g}: {twcrps(storm, 12.0, Weight.gaussian_cdf(10.0, s)):.5f}")
print(f"indicator weight      : {twcrps(storm, 12.0, Weight.indicator(10.0)):.5f}")

# Skill against a reference uses mean scores over cases.
rng = np.random.default_rng(0)
obs = storm.rvs(size=2000, rng=rng)
truth = GevDist(np.full(2000, 11.0), np.full(2000, 2.5), np.full(2000, 0.2))
naive = TruncatedNormal(np.full(2000, 11.0), np.full(2000, 3.0))
w = Weight.indicator(15.0)
print(f"twCRPSS of the true law over a TN at r=15: {twcrpss(twcrps(truth, obs, w), twcrps(naive, obs, w)):.3f}")

# Calibration summaries on the same cases.
cov, width = coverage_width(truth, obs)
print(f"80% interval coverage {cov:.1f}%  mean width {width:.2f} m/s")
print(f"mean PIT {pit(truth, obs).mean():.3f} (0.5 when calibrated)")
print(f"log score at y: calm {log_score(calm, y):.3f}, storm {log_score(storm, y):.3f}")
