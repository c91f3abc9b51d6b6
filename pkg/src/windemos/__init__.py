"""Statistical postprocessing of ensemble forecasts of daily maximum wind speed.

Truncated normal and GEV regressions on the ensemble, a regime-switching
combination of the two, proper scoring rules with closed forms, and a
rolling-window verification experiment on synthetic or user-supplied data.
"""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .dists import EmpiricalEnsemble, GevDist, RegimeSwitching, TruncatedNormal
from .scoring import Weight, crps, crps_quadrature, twcrps, twcrpss

__all__ = [
    "__version__",
    "TruncatedNormal",
    "GevDist",
    "EmpiricalEnsemble",
    "RegimeSwitching",
    "Weight",
    "crps",
    "crps_quadrature",
    "twcrps",
    "twcrpss",
]
