"""Proper scoring rules and calibration diagnostics.

All scores are negatively oriented. Closed forms are vectorised over cases;
:func:`crps_quadrature` is the slow, independent reference used to check
them.
"""
from __future__ import annotations

import bisect
import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import singledispatch
from typing import Callable

import numpy as np
from scipy import integrate, stats
from scipy.special import exp1, gamma, gammaincc, log_ndtr, ndtr

from .dists import (
    GUMBEL_EPS,
    EmpiricalEnsemble,
    GevDist,
    RegimeSwitching,
    TruncatedNormal,
)

__all__ = [
    "Weight",
    "InfiniteMeanError",
    "QuadratureError",
    "crps",
    "crps_quadrature",
    "twcrps",
    "twcrpss",
    "log_score",
    "mean_log_score",
    "abs_error",
    "mae",
    "central_interval",
    "coverage_width",
    "pit",
    "verification_ranks",
    "rank_histogram",
    "pit_histogram",
    "Histogram",
    "ScoreRow",
    "ScoreTable",
]

_SQRT2 = math.sqrt(2.0)
_SQRT_PI = math.sqrt(math.pi)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG2 = math.log(2.0)


class InfiniteMeanError(ValueError):
    """The CRPS is undefined because the forecast has no finite mean."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested accuracy."""


@dataclass(frozen=True)
class Weight:
    """Nonnegative weight function for the threshold-weighted CRPS.

    Use the constructors :meth:`constant`, :meth:`indicator` and
    :meth:`gaussian_cdf` rather than building instances by hand.
    """

    kind: str = "constant"
    r: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "indicator", "gaussian_cdf"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if not (math.isfinite(self.r) and math.isfinite(self.sigma)):
            raise ValueError("weight parameters must be finite")
        if self.kind == "gaussian_cdf" and self.sigma <= 0:
            raise ValueError("gaussian_cdf weight requires sigma > 0")

    @classmethod
    def constant(cls) -> "Weight":
        return cls("constant")

    @classmethod
    def indicator(cls, r: float) -> "Weight":
        """``w(z) = 1{z >= r}``."""
        return cls("indicator", float(r))

    @classmethod
    def gaussian_cdf(cls, mu: float, sigma: float) -> "Weight":
        """``w(z) = Phi((z - mu) / sigma)``."""
        return cls("gaussian_cdf", float(mu), float(sigma))

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "constant":
            return np.ones_like(z)
        if self.kind == "indicator":
            return (z >= self.r).astype(float)
        return stats.norm.cdf(z, self.r, self.sigma)

    def _scalar(self) -> Callable[[float], float]:
        if self.kind == "constant":
            return lambda z: 1.0
        if self.kind == "indicator":
            r = self.r
            return lambda z: 1.0 if z >= r else 0.0
        mu, s = self.r, self.sigma
        return lambda z: 0.5 * math.erfc(-(z - mu) / (s * _SQRT2))

    def _breakpoints(self) -> list[float]:
        if self.kind == "indicator":
            return [self.r]
        if self.kind == "gaussian_cdf":
            return [self.r + j * self.sigma for j in (-10, -5, -2, 0, 2, 5, 10)]
        return []


CONSTANT = Weight.constant()


def _points(y):
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("observations must be finite")
    return y


# ---------------------------------------------------------------------------
# closed forms

def _crps_tn(mu, sigma, y):
    mu, sigma, y = np.broadcast_arrays(mu, sigma, y)
    yc = np.maximum(y, 0.0)
    # linear space is exact enough unless the mass above zero is tiny
    fast = mu / sigma > -25.0
    if fast.all():
        out = _crps_tn_linear(mu, sigma, yc)
    else:
        out = np.empty(mu.shape)
        out[fast] = _crps_tn_linear(mu[fast], sigma[fast], yc[fast])
        slow = ~fast
        out[slow] = _crps_tn_log(mu[slow], sigma[slow], yc[slow])
    # below the cutoff the integrand is 1 between y and 0
    return out + np.maximum(-y, 0.0)


def _crps_tn_linear(mu, sigma, yc):
    r = mu / sigma
    p = ndtr(r)
    z = (yc - mu) / sigma
    q = ndtr(-z) / p
    f = np.exp(-0.5 * z * z - _LOG_SQRT_2PI) / p
    pair = ndtr(_SQRT2 * r) / (p * p * _SQRT_PI)
    return sigma * (z - 2.0 * z * q + 2.0 * f - pair)


def _crps_tn_log(mu, sigma, yc):
    lm = log_ndtr(mu / sigma)
    z = (yc - mu) / sigma
    q = np.exp(log_ndtr(-z) - lm)
    f = np.exp(-0.5 * z * z - _LOG_SQRT_2PI - lm)
    pair = np.exp(log_ndtr(_SQRT2 * mu / sigma) - 2.0 * lm) / _SQRT_PI
    return sigma * (z - 2.0 * z * q + 2.0 * f - pair)


def _tn_sq_cdf_integral(mu, sigma, r):
    """``int_{-inf}^r F(z)^2 dz`` for the zero-truncated normal."""
    lm = log_ndtr(mu / sigma)

    def antideriv(x):
        q = np.exp(log_ndtr(-x) - lm)
        f = np.exp(-0.5 * x * x - _LOG_SQRT_2PI - lm)
        tail = np.exp(log_ndtr(-_SQRT2 * x) - 2.0 * lm) / _SQRT_PI
        return x - 2.0 * (x * q - f) + x * q * q - 2.0 * q * f + tail

    alpha = -mu / sigma
    rho = (np.maximum(r, 0.0) - mu) / sigma
    return np.maximum(sigma * (antideriv(rho) - antideriv(alpha)), 0.0)


def _gev_safe_shape(xi):
    gum = np.abs(xi) < GUMBEL_EPS
    return gum, np.where(gum, 0.5, xi)


def _gumbel_e1(x, v):
    # E1(exp(-x)); for huge x exp(-x) underflows and E1(v) ~ -gamma - log v
    with np.errstate(over="ignore"):
        return np.where(v > 1e-300, exp1(np.maximum(v, 1e-300)), x - np.euler_gamma)


def _crps_gev(d: GevDist, y):
    xi = d.xi
    if np.any(xi >= 1.0):
        raise InfiniteMeanError("CRPS requires a finite mean (xi < 1)")
    x = (y - d.mu) / d.sigma
    gum, xs = _gev_safe_shape(xi)
    v = d._neglog_cdf(y)
    g = np.exp(-v)
    g1 = gamma(1.0 - xs)
    with np.errstate(invalid="ignore"):
        gen = (
            x * (2.0 * g - 1.0)
            + (g1 * (2.0 - 2.0 ** xs) - 1.0) / xs
            - (2.0 / xs) * (g1 * gammaincc(1.0 - xs, v) - g)
        )
    gum_val = -x + np.euler_gamma - _LOG2 + 2.0 * _gumbel_e1(x, v)
    return d.sigma * np.where(gum, gum_val, gen)


def _gev_sq_cdf_integral(d: GevDist, r):
    """``int_{-inf}^r G(z)^2 dz``; ``G^2`` is the GEV law of a pairwise maximum."""
    gum, xs = _gev_safe_shape(d.xi)
    mu_m = np.where(gum, d.mu + d.sigma * _LOG2, d.mu + d.sigma * np.expm1(xs * _LOG2) / xs)
    s_m = np.where(gum, d.sigma, d.sigma * 2.0 ** xs)
    m = GevDist(mu_m, s_m, d.xi)
    x = (r - mu_m) / s_m
    v = m._neglog_cdf(r)
    g = np.exp(-v)
    with np.errstate(invalid="ignore"):
        gen = x * g - (gamma(1.0 - xs) * gammaincc(1.0 - xs, v) - g) / xs
    out = s_m * np.where(gum, _gumbel_e1(x, v), gen)
    return np.maximum(out, 0.0)


def _crps_ensemble(members, y):
    k = members.shape[-1]
    if members.ndim == 1:
        absdev = np.abs(members[None, :] - y.reshape(-1, 1)).mean(axis=-1).reshape(y.shape)
    else:
        absdev = np.abs(members - y[..., None]).mean(axis=-1)
    # sum_{i,j} |x_i - x_j| / (2k^2) from the sorted sample
    w = 2.0 * np.arange(1, k + 1) - k - 1
    spread = members @ w / (k * k)
    return absdev - spread


def _split(f: RegimeSwitching, fun, y, *args):
    mask = f.use_gev
    y = np.broadcast_to(y, mask.shape)
    tn_val = fun(f.tn, y[~mask], *args) if (~mask).any() else np.empty(0)
    gev_val = fun(f.gev, y[mask], *args) if mask.any() else np.empty(0)
    return f.combine(tn_val, gev_val)


@singledispatch
def crps(f, y):
    """Continuous ranked probability score of forecast ``f`` at ``y``.

    Closed forms are used for every supported forecast type. For the GEV
    the shape must satisfy ``xi < 1``.
    """
    raise TypeError(f"no CRPS for {type(f).__name__}")


@crps.register
def _(f: TruncatedNormal, y):
    return _crps_tn(f.mu, f.sigma, _points(y))


@crps.register
def _(f: GevDist, y):
    return _crps_gev(f, _points(y))


@crps.register
def _(f: EmpiricalEnsemble, y):
    return _crps_ensemble(f.members, _points(y))


@crps.register
def _(f: RegimeSwitching, y):
    return _split(f, crps, _points(y))


@singledispatch
def _twcrps_indicator(f, y, r):
    raise TypeError(f"no threshold-weighted CRPS for {type(f).__name__}")


# With w = 1{z >= r}: twCRPS(F, y) = CRPS(F, max(y, r)) - int_{-inf}^r F^2.

@_twcrps_indicator.register
def _(f: TruncatedNormal, y, r):
    out = _crps_tn(f.mu, f.sigma, np.maximum(y, r)) - _tn_sq_cdf_integral(f.mu, f.sigma, r)
    return np.maximum(out, 0.0)


@_twcrps_indicator.register
def _(f: GevDist, y, r):
    out = _crps_gev(f, np.maximum(y, r)) - _gev_sq_cdf_integral(f, r)
    return np.maximum(out, 0.0)


@_twcrps_indicator.register
def _(f: EmpiricalEnsemble, y, r):
    # censoring members and observation at r leaves the weighted integrand unchanged
    return _crps_ensemble(np.maximum(f.members, r), np.maximum(y, r))


@_twcrps_indicator.register
def _(f: RegimeSwitching, y, r):
    return _split(f, _twcrps_indicator, y, r)


def twcrps(f, y, w: Weight = CONSTANT):
    """Threshold-weighted CRPS, ``int (F(z) - 1{y <= z})^2 w(z) dz``.

    Constant and indicator weights use closed forms; Gaussian-CDF weights
    fall back to :func:`crps_quadrature` case by case.
    """
    y = _points(y)
    if w.kind == "constant":
        return crps(f, y)
    if w.kind == "indicator":
        return _twcrps_indicator(f, y, w.r)
    return _quadrature_cases(f, y, w)


def twcrpss(scores, ref_scores) -> float:
    """Skill of mean threshold-weighted CRPS relative to a reference.

    Both arguments are per-case scores over the same cases. Returns
    ``1 - mean(scores) / mean(ref_scores)``.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    ref_scores = np.asarray(ref_scores, dtype=float).ravel()
    if scores.shape != ref_scores.shape:
        raise ValueError("score arrays must cover the same cases")
    ref = math.fsum(ref_scores)
    if not ref > 0.0:
        raise ZeroDivisionError("reference score is zero; skill is undefined")
    return 1.0 - math.fsum(scores) / ref


# ---------------------------------------------------------------------------
# quadrature reference

_TAIL_PROBS = (
    [1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 0.05]
    + [j / 10 for j in range(1, 10)]
    + [0.95, 0.99, 1 - 1e-3, 1 - 1e-4, 1 - 1e-5, 1 - 1e-6, 1 - 1e-7, 1 - 1e-8, 1 - 1e-9]
)


def _single(f):
    """Reduce a one-case forecast of any batch shape to a scalar forecast."""
    if isinstance(f, EmpiricalEnsemble):
        if f.shared:
            return f
        if f.members.size != f.k:
            raise ValueError("crps_quadrature scores one case at a time")
        return EmpiricalEnsemble(f.members.reshape(-1))
    if int(np.prod(f.shape)) != 1:
        raise ValueError("crps_quadrature scores one case at a time")
    if isinstance(f, RegimeSwitching):
        f = f.gev if f.use_gev[0] else f.tn
    params = {k: np.reshape(getattr(f, k), ()) for k in f._fields}
    return type(f)(**params)


def _scalar_cdf(f) -> Callable[[float], float]:
    if isinstance(f, TruncatedNormal):
        mu, s = float(f.mu), float(f.sigma)
        lm = float(log_ndtr(mu / s))

        def cdf(z):
            if z <= 0.0:
                return 0.0
            return min(1.0, -math.expm1(float(log_ndtr(-(z - mu) / s)) - lm))

        return cdf
    if isinstance(f, GevDist):
        mu, s, xi = float(f.mu), float(f.sigma), float(f.xi)
        if abs(xi) < GUMBEL_EPS:
            return lambda z: math.exp(-math.exp(-(z - mu) / s)) if (z - mu) / s > -700 else 0.0

        def cdf(z):
            a = xi * (z - mu) / s
            if a <= -1.0:
                return 0.0 if xi > 0 else 1.0
            return math.exp(-math.exp(-math.log1p(a) / xi))

        return cdf
    if isinstance(f, EmpiricalEnsemble):
        m = f.members.tolist()
        k = len(m)
        return lambda z: bisect.bisect_right(m, z) / k
    raise TypeError(f"no quadrature for {type(f).__name__}")


def _support_breaks(f) -> list[float]:
    if isinstance(f, EmpiricalEnsemble):
        return f.members.tolist()
    return [float(q) for q in np.atleast_1d(f.quantile(np.array(_TAIL_PROBS)))]


def crps_quadrature(f, y: float, w: Weight = CONSTANT, tol: float = 1e-9) -> float:
    """Weighted CRPS of a single forecast by adaptive quadrature.

    The integral runs over the region where the forecast CDF lies in
    ``[1e-9, 1 - 1e-9]`` widened to contain ``y`` plus one unit of slack on
    each side. The domain is split at the observation, weight breakpoints
    and a ladder of forecast quantiles so each piece is smooth.
    """
    f = _single(f)
    if isinstance(f, GevDist) and float(f.xi) >= 1.0:
        raise InfiniteMeanError("CRPS requires a finite mean (xi < 1)")
    y = float(_points(y))
    cdf = _scalar_cdf(f)
    wfun = w._scalar()

    breaks = _support_breaks(f)
    lo = min(y, breaks[0]) - 1.0
    hi = max(y, breaks[-1]) + 1.0
    # geometric ladders around the centre and the observation keep long
    # tail pieces short relative to their distance from either
    q1, centre, q3 = (float(v) for v in np.atleast_1d(f.quantile(np.array([0.25, 0.5, 0.75]))))
    step = max(q3 - q1, 1e-3)
    ladder = [c + s * step * 2.0**j for c in (centre, y) for s in (-1, 1) for j in range(64)]
    pts = sorted({lo, hi, y, *breaks, *w._breakpoints(), *ladder})
    pts = [p for p in pts if lo <= p <= hi]

    def integrand(z):
        step = 1.0 if z >= y else 0.0
        d = cdf(z) - step
        return d * d * wfun(z)

    pieces, errs = [], []
    for a, b in zip(pts[:-1], pts[1:]):
        if b <= a:
            continue
        val, err, *info = integrate.quad(
            integrand, a, b, epsabs=tol * 1e-2, epsrel=1e-11, limit=200, full_output=1
        )
        pieces.append(val)
        errs.append(err)
    total_err = math.fsum(errs)
    if total_err > tol:
        raise QuadratureError(
            f"quadrature error estimate {total_err:.3g} exceeds {tol:.3g} "
            f"on [{lo:.6g}, {hi:.6g}] with {len(pieces)} pieces"
        )
    return math.fsum(pieces)


def _case(f, i):
    if isinstance(f, RegimeSwitching):
        mask = f.use_gev
        j = int(mask[:i].sum()) if mask[i] else int((~mask[:i]).sum())
        return f.gev[j] if mask[i] else f.tn[j]
    if isinstance(f, EmpiricalEnsemble) and f.shared:
        return f
    return f[i]


def _quadrature_cases(f, y, w):
    shape = f.shape
    if not shape:
        # one forecast for every observation, as for climatology
        if np.ndim(y) == 0:
            return np.asarray(crps_quadrature(f, float(y), w))
        return np.array([crps_quadrature(f, float(v), w) for v in y])
    y = np.broadcast_to(y, shape)
    return np.array([crps_quadrature(_case(f, i), y[i], w) for i in range(shape[0])])


# ---------------------------------------------------------------------------
# logarithmic score and point-forecast metrics

def log_score(f, y):
    """Negative log predictive density; ``+inf`` where the density is zero."""
    if isinstance(f, EmpiricalEnsemble):
        raise TypeError("an empirical ensemble has no density; the log score is undefined")
    return -f.logpdf(_points(y))


def mean_log_score(values) -> tuple[float, int]:
    """Mean of the finite log scores and the number of infinite ones left out."""
    values = np.asarray(values, dtype=float).ravel()
    finite = np.isfinite(values)
    n_inf = int((~finite).sum())
    if not finite.any():
        return math.inf, n_inf
    return math.fsum(values[finite]) / int(finite.sum()), n_inf


def abs_error(f, y):
    """Absolute error of the predictive median."""
    return np.abs(np.asarray(f.median(), dtype=float) - _points(y))


def _nonempty(y):
    y = _points(y)
    if y.size == 0:
        raise ValueError("no cases to score")
    return y


def mae(f, y) -> float:
    y = _nonempty(y)
    e = np.broadcast_to(abs_error(f, y), y.shape)
    return math.fsum(e.ravel()) / y.size


def central_interval(f, level: float = 0.8):
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    a = 0.5 * (1.0 - level)
    return np.asarray(f.quantile(a), dtype=float), np.asarray(f.quantile(1.0 - a), dtype=float)


def coverage_width(f, y, level: float = 0.8) -> tuple[float, float]:
    """Coverage (percent) and mean width of central prediction intervals.

    Intervals are closed, so observations on an endpoint count as covered.
    """
    y = _nonempty(y)
    lo, hi = central_interval(f, level)
    lo, hi = np.broadcast_to(lo, y.shape), np.broadcast_to(hi, y.shape)
    inside = (y >= lo) & (y <= hi)
    return 100.0 * inside.mean(), math.fsum((hi - lo).ravel()) / y.size


# ---------------------------------------------------------------------------
# calibration

def pit(f, y, rng=None):
    """Probability integral transform ``F(y)``.

    For an empirical ensemble the value is drawn uniformly on
    ``[F(y-), F(y)]`` so that calibrated forecasts give uniform PIT values.
    """
    y = _points(y)
    if isinstance(f, EmpiricalEnsemble):
        rng = np.random.default_rng(rng)
        lo, hi = f.cdf_left(y), f.cdf(y)
        return lo + (hi - lo) * rng.uniform(size=np.shape(hi))
    return f.cdf(y)


def verification_ranks(members, obs, rng=None):
    """Rank of each observation within its pooled ensemble, 1..k+1.

    Ties between the observation and members are broken uniformly at random.
    """
    members = np.asarray(members, dtype=float)
    obs = _points(obs)
    if members.ndim != 2 or members.shape[0] != obs.size:
        raise ValueError("members must have shape (n_cases, k)")
    rng = np.random.default_rng(rng)
    below = (members < obs[:, None]).sum(axis=1)
    ties = (members == obs[:, None]).sum(axis=1)
    return 1 + below + rng.integers(0, ties + 1)


@dataclass(frozen=True)
class Histogram:
    bin_low: np.ndarray
    bin_high: np.ndarray
    count: np.ndarray

    @property
    def n(self) -> int:
        return int(self.count.sum())

    @property
    def expected(self) -> np.ndarray:
        """Counts a uniform (calibrated) histogram would have."""
        return np.full(self.count.shape, self.n / self.count.size)

    def chi2_pvalue(self) -> float:
        return float(stats.chisquare(self.count).pvalue)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count", "expected"])
        for row in zip(self.bin_low, self.bin_high, self.count, self.expected):
            w.writerow([_fmt(row[0]), _fmt(row[1]), int(row[2]), _fmt(row[3])])
        return buf.getvalue()


def rank_histogram(members, obs, rng=None) -> Histogram:
    members = np.asarray(members)
    k = members.shape[-1]
    ranks = verification_ranks(members, obs, rng)
    counts = np.bincount(ranks, minlength=k + 2)[1:]
    r = np.arange(1, k + 2, dtype=float)
    return Histogram(r - 0.5, r + 0.5, counts)


def pit_histogram(values, bins: int = 20) -> Histogram:
    values = np.asarray(values, dtype=float).ravel()
    if np.any((values < 0) | (values > 1)):
        raise ValueError("PIT values must lie in [0, 1]")
    counts, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    return Histogram(edges[:-1], edges[1:], counts)


# ---------------------------------------------------------------------------
# score tables

def _fmt(x) -> str:
    return repr(float(x))


def _thr_name(r: float) -> str:
    return f"twcrps_r{float(r):g}"


@dataclass
class ScoreRow:
    forecaster: str
    crps: float
    mae: float
    coverage80: float
    width80: float
    twcrps: dict[float, float] = field(default_factory=dict)
    n_cases: int = 0
    # further named mean scores, e.g. twCRPS under a Gaussian-CDF weight
    extra: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_cases(
        cls,
        forecaster: str,
        crps_values,
        abs_errors,
        covered,
        widths,
        twcrps_values: dict[float, np.ndarray] | None = None,
        extra_values: dict[str, np.ndarray] | None = None,
    ) -> "ScoreRow":
        crps_values = np.asarray(crps_values, dtype=float).ravel()
        n = crps_values.size
        if n == 0:
            raise ValueError("no cases to score")

        def mean(a):
            return math.fsum(np.asarray(a, dtype=float).ravel()) / n

        return cls(
            forecaster,
            mean(crps_values),
            mean(abs_errors),
            100.0 * mean(np.asarray(covered, dtype=float)),
            mean(widths),
            {float(r): mean(v) for r, v in (twcrps_values or {}).items()},
            n,
            {str(k): mean(v) for k, v in (extra_values or {}).items()},
        )


@dataclass
class ScoreTable:
    """Per-forecaster summary scores in a fixed column order."""

    rows: list[ScoreRow]
    thresholds: tuple[float, ...] = (10.0, 12.0, 15.0)

    @property
    def extra_columns(self) -> list[str]:
        names = []
        for row in self.rows:
            names += [k for k in row.extra if k not in names]
        return names

    @property
    def columns(self) -> list[str]:
        return (
            ["forecaster", "crps", "mae", "coverage80", "width80"]
            + [_thr_name(r) for r in self.thresholds]
            + self.extra_columns
            + ["n_cases"]
        )

    def __getitem__(self, forecaster: str) -> ScoreRow:
        for row in self.rows:
            if row.forecaster == forecaster:
                return row
        raise KeyError(forecaster)

    def records(self) -> list[dict]:
        out = []
        for row in self.rows:
            rec = {
                "forecaster": row.forecaster,
                "crps": row.crps,
                "mae": row.mae,
                "coverage80": row.coverage80,
                "width80": row.width80,
            }
            for r in self.thresholds:
                rec[_thr_name(r)] = row.twcrps.get(float(r), math.nan)
            for k in self.extra_columns:
                rec[k] = row.extra.get(k, math.nan)
            rec["n_cases"] = row.n_cases
            out.append(rec)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for rec in self.records():
            w.writerow(
                [v if isinstance(v, (str, int)) else _fmt(v) for v in rec.values()]
            )
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"columns": self.columns, "rows": self.records()}, indent=2) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "ScoreTable":
        reader = csv.DictReader(io.StringIO(text))
        names = reader.fieldnames or []
        thresholds = tuple(float(c[len("twcrps_r"):]) for c in names if c.startswith("twcrps_r"))
        fixed = {"forecaster", "crps", "mae", "coverage80", "width80", "n_cases"}
        extra = [c for c in names if c not in fixed and not c.startswith("twcrps_r")]
        rows = []
        for rec in reader:
            rows.append(
                ScoreRow(
                    rec["forecaster"],
                    float(rec["crps"]),
                    float(rec["mae"]),
                    float(rec["coverage80"]),
                    float(rec["width80"]),
                    {r: float(rec[_thr_name(r)]) for r in thresholds},
                    int(rec["n_cases"]),
                    {k: float(rec[k]) for k in extra},
                )
            )
        return cls(rows, thresholds)

    def format(self, digits: int = 3) -> str:
        """Plain-text rendering for terminals and logs."""
        cols = self.columns
        body = [
            [
                v if isinstance(v, str) else (str(v) if isinstance(v, int) else f"{v:.{digits}f}")
                for v in rec.values()
            ]
            for rec in self.records()
        ]
        widths = [max(len(c), *(len(r[i]) for r in body)) for i, c in enumerate(cols)]
        lines = ["  ".join(c.rjust(wd) for c, wd in zip(cols, widths))]
        lines += ["  ".join(v.rjust(wd) for v, wd in zip(r, widths)) for r in body]
        return "\n".join(lines)
