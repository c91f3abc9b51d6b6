"""Optimum score estimation for the nonhomogeneous regression models.

The truncated normal regression is fitted by minimum CRPS, the GEV
regression by maximum likelihood. Both pool forecast-observation pairs
over stations and days and see the ensemble only through its exchangeable
summaries (mean, variance, median).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.optimize import minimize

from .scoring import _crps_tn

__all__ = [
    "ensemble_summaries",
    "TrainingSet",
    "TnCoefficients",
    "GevCoefficients",
    "FittedModel",
    "InsufficientDataError",
    "ConvergenceError",
    "tn_objective",
    "gev_objective",
    "fit_tn_min_crps",
    "fit_gev_ml",
    "fit_regime_switching",
    "N_MIN",
    "TN_DEFAULT",
    "GEV_DEFAULT",
    "XI_BOX",
]

N_MIN = 100
XI_BOX = (-0.5, 0.95)
MAX_EVALS = 5000
FATOL = 1e-8
XATOL = 1e-6
# per-case penalty for leaving the GEV support or scale positivity
_PENALTY = 1e3


class InsufficientDataError(ValueError):
    """Too few training pairs to fit a model."""


class ConvergenceError(RuntimeError):
    """The optimizer did not converge; ``best`` holds the best fit found."""

    def __init__(self, message: str, best: "FittedModel"):
        super().__init__(message)
        self.best = best


def ensemble_summaries(members):
    """Mean, population variance and median over the trailing member axis.

    >>> ensemble_summaries([1.0, 2.0, 3.0])
    (2.0, 0.6666666666666666, 2.0)
    """
    m = np.asarray(members, dtype=float)
    if m.ndim == 0 or m.shape[-1] < 2:
        raise ValueError("ensemble summaries need at least two members")
    if not np.all(np.isfinite(m)):
        raise ValueError("ensemble members must be finite")
    x_bar = m.mean(axis=-1)
    s2 = m.var(axis=-1)
    x_med = np.median(m, axis=-1)
    if m.ndim == 1:
        return float(x_bar), float(s2), float(x_med)
    return x_bar, s2, x_med


@dataclass(frozen=True)
class TrainingSet:
    """Pooled ensemble summaries and verifying observations."""

    x_bar: np.ndarray
    s2: np.ndarray
    x_med: np.ndarray
    y: np.ndarray
    k: int | None = None

    def __post_init__(self):
        arrays = [np.array(getattr(self, n), dtype=float).ravel() for n in ("x_bar", "s2", "x_med", "y")]
        if len({a.size for a in arrays}) != 1:
            raise ValueError("training arrays must have equal length")
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("training data must be finite")
        if np.any(arrays[1] < 0):
            raise ValueError("ensemble variance must be nonnegative")
        if np.any(arrays[3] < 0):
            raise ValueError("observations must be nonnegative")
        for name, a in zip(("x_bar", "s2", "x_med", "y"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def from_members(cls, members, y) -> "TrainingSet":
        members = np.asarray(members, dtype=float)
        x_bar, s2, x_med = ensemble_summaries(np.atleast_2d(members))
        return cls(x_bar, s2, x_med, y, members.shape[-1])

    def __len__(self) -> int:
        return self.y.size

    def subset(self, mask) -> "TrainingSet":
        return TrainingSet(self.x_bar[mask], self.s2[mask], self.x_med[mask], self.y[mask], self.k)


@dataclass(frozen=True)
class TnCoefficients:
    """``mu = a + b * x_bar`` and ``sigma^2 = c + d * s2``."""

    a: float
    b: float
    c: float
    d: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d])

    def variance(self, s2):
        return self.c + self.d * np.asarray(s2, dtype=float)


@dataclass(frozen=True)
class GevCoefficients:
    """``mu = mu0 + mu1 * x_bar``, ``sigma = sigma0 + sigma1 * x_bar`` and constant ``xi``."""

    mu0: float
    mu1: float
    sigma0: float
    sigma1: float
    xi: float

    def as_array(self) -> np.ndarray:
        return np.array([self.mu0, self.mu1, self.sigma0, self.sigma1, self.xi])

    def scale(self, x_bar):
        return self.sigma0 + self.sigma1 * np.asarray(x_bar, dtype=float)


TN_DEFAULT = TnCoefficients(0.0, 1.0, 1.0, 1.0)
GEV_DEFAULT = GevCoefficients(0.0, 1.0, 1.0, 0.0, 0.1)

_COEF_TYPES = {"tn": TnCoefficients, "gev": GevCoefficients}


@dataclass
class FittedModel:
    """Coefficients from one training window plus fit diagnostics.

    ``source`` records how the coefficients were obtained: ``"fit"`` for a
    fresh estimate, ``"previous"`` or ``"full"`` for the fallbacks used when
    a regime stratum is too small.
    """

    kind: str
    coefficients: TnCoefficients | GevCoefficients
    objective: float
    n_evals: int
    converged: bool
    n_train: int
    source: str = "fit"
    at_boundary: bool = False
    window_end: str | None = None
    strata: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["coefficients"] = asdict(self.coefficients)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModel":
        d = dict(d)
        d["coefficients"] = _COEF_TYPES[d["kind"]](**d["coefficients"])
        return cls(**d)


# ---------------------------------------------------------------------------
# objectives

def tn_objective(params, train: TrainingSet) -> float:
    """Mean CRPS of the truncated normal regression.

    ``params`` is ``(a, b, gamma, delta)`` with ``c = gamma**2`` and
    ``d = delta**2``, which keeps the predictive variance nonnegative.
    """
    a, b, g, dl = params
    var = g * g + dl * dl * train.s2
    if not np.all(var > 0):
        return math.inf
    sigma = np.sqrt(var)
    val = _crps_tn(a + b * train.x_bar, sigma, train.y).mean()
    return float(val) if np.isfinite(val) else math.inf


def gev_objective(params, train: TrainingSet) -> float:
    """Mean negative log-likelihood of the GEV regression.

    Cases with a nonpositive scale or an observation outside the support
    add a large finite penalty that grows with the violation, so the
    simplex is pushed back to the feasible region.
    """
    mu0, mu1, s0, s1, xi = params
    lo, hi = XI_BOX
    if not lo < xi < hi:
        return _PENALTY * (100.0 + abs(xi - min(max(xi, lo), hi)))
    x_bar, y = train.x_bar, train.y
    sigma = s0 + s1 * x_bar
    bad_scale = sigma <= 0
    sigma = np.where(bad_scale, 1.0, sigma)
    z = (y - mu0 - mu1 * x_bar) / sigma
    if abs(xi) < 1e-8:
        nll = np.log(sigma) + z + np.exp(-z)
        outside = np.zeros_like(z, dtype=bool)
        viol = 0.0
    else:
        arg = xi * z
        outside = arg <= -1.0
        lt = np.log1p(np.where(outside, 0.0, arg))
        nll = np.log(sigma) + (1.0 + 1.0 / xi) * lt + np.exp(-lt / xi)
        viol = np.where(outside, -1.0 - arg, 0.0)
    bad = bad_scale | outside
    pen = np.where(bad_scale, 1.0 - (s0 + s1 * x_bar), 0.0) + viol
    total = np.where(bad, _PENALTY * (1.0 + pen), nll)
    val = total.mean()
    return float(val) if np.isfinite(val) else math.inf


# ---------------------------------------------------------------------------
# simplex search with restarts

def _simplex(fun, x0, step):
    x0 = np.asarray(x0, dtype=float)
    simplex = np.vstack([x0, x0 + np.diag(step)])
    res = minimize(
        fun,
        x0,
        method="Nelder-Mead",
        options={
            "initial_simplex": simplex,
            "xatol": XATOL,
            "fatol": FATOL,
            "maxfev": MAX_EVALS,
        },
    )
    return res


def _search(fun, starts, rng, step_scale):
    """Nelder-Mead from each start, then once more from a jittered best point."""
    runs = []
    for x0 in starts:
        if x0 is None:
            continue
        step = np.where(np.abs(x0) > 0.1, 0.1 * np.abs(x0), 0.05) * step_scale
        runs.append(_simplex(fun, x0, step))
    best = min(runs, key=lambda r: r.fun)
    jitter = 1.0 + 0.01 * rng.standard_normal(best.x.size)
    x_j = best.x * jitter
    runs.append(_simplex(fun, x_j, np.maximum(0.01 * np.abs(best.x), 1e-3)))
    best = min(runs, key=lambda r: r.fun)
    n_evals = sum(int(r.nfev) for r in runs)
    return best, n_evals


def _check_size(train: TrainingSet, n_min: int, what: str) -> None:
    if len(train) < max(n_min, 1):
        raise InsufficientDataError(f"{what} needs at least {n_min} training pairs, got {len(train)}")


def fit_tn_min_crps(
    train: TrainingSet,
    init: TnCoefficients | None = None,
    n_min: int = N_MIN,
    rng=None,
) -> FittedModel:
    """Minimum-CRPS estimate of the truncated normal regression.

    Starts from the default coefficients and, when given, from ``init``;
    the best solution is polished by a restart from a jittered copy.
    Raises :class:`ConvergenceError` (holding the best fit) if no run
    met the tolerance within the evaluation budget.
    """
    _check_size(train, n_min, "truncated normal fit")
    rng = np.random.default_rng(rng)

    def to_params(c: TnCoefficients):
        return np.array([c.a, c.b, math.sqrt(max(c.c, 0.0)), math.sqrt(max(c.d, 0.0))])

    start = to_params(TN_DEFAULT)
    warm = to_params(init) if init is not None else None
    best, n_evals = _search(lambda p: tn_objective(p, train), [start, warm], rng, 1.0)
    a, b, g, dl = best.x
    model = FittedModel(
        "tn",
        TnCoefficients(float(a), float(b), float(g * g), float(dl * dl)),
        float(best.fun),
        n_evals,
        bool(best.success),
        len(train),
    )
    if not model.converged:
        raise ConvergenceError("minimum-CRPS search did not converge", model)
    return model


def fit_gev_ml(
    train: TrainingSet,
    init: GevCoefficients | None = None,
    n_min: int = N_MIN,
    rng=None,
) -> FittedModel:
    """Maximum-likelihood estimate of the GEV regression.

    The objective reported is the mean negative log-likelihood. The shape
    is confined to ``XI_BOX`` during the search; a solution within 1e-3 of
    either edge is flagged with ``at_boundary``.
    """
    _check_size(train, n_min, "GEV fit")
    rng = np.random.default_rng(rng)
    start = GEV_DEFAULT.as_array()
    warm = init.as_array() if init is not None else None
    best, n_evals = _search(lambda p: gev_objective(p, train), [start, warm], rng, 1.0)
    coef = GevCoefficients(*(float(v) for v in best.x))
    lo, hi = XI_BOX
    model = FittedModel(
        "gev",
        coef,
        float(best.fun),
        n_evals,
        bool(best.success),
        len(train),
        at_boundary=bool(coef.xi - lo < 1e-3 or hi - coef.xi < 1e-3),
    )
    feasible = best.fun < _PENALTY
    if not (model.converged and feasible):
        raise ConvergenceError("maximum-likelihood search did not converge to a feasible point", model)
    return model


def fit_regime_switching(
    train: TrainingSet,
    theta: float,
    previous: tuple[FittedModel | None, FittedModel | None] | None = None,
    full: tuple[FittedModel | None, FittedModel | None] | None = None,
    n_min: int = N_MIN,
    rng=None,
    init: tuple[FittedModel | None, FittedModel | None] | None = None,
) -> tuple[FittedModel, FittedModel]:
    """Fit the truncated normal on ``x_med < theta`` and the GEV on the rest.

    A stratum with fewer than ``n_min`` pairs reuses ``previous`` (the
    prior window's branch coefficients) when available, and otherwise the
    fit on the whole window, taken from ``full`` or computed here.
    ``init`` optionally warm-starts each branch search.
    """
    low = train.x_med < theta
    strata = {"tn": int(low.sum()), "gev": int((~low).sum())}
    prev_tn, prev_gev = previous if previous is not None else (None, None)
    full_tn, full_gev = full if full is not None else (None, None)
    init_tn, init_gev = init if init is not None else (None, None)
    rng = np.random.default_rng(rng)

    def branch(mask, fitter, prev, full_fit, start):
        sub = train.subset(mask)
        if len(sub) >= n_min:
            model = _fit_or_best(fitter, sub, n_min, rng, start)
        elif prev is not None:
            model = _relabel(prev, "previous")
        else:
            if full_fit is None:
                if len(train) < n_min:
                    raise InsufficientDataError(
                        f"regime stratum has {len(sub)} pairs and the window only {len(train)}"
                    )
                full_fit = _fit_or_best(fitter, train, n_min, rng, start)
            model = _relabel(full_fit, "full")
        model.strata = dict(strata)
        return model

    tn = branch(low, fit_tn_min_crps, prev_tn, full_tn, init_tn)
    gev = branch(~low, fit_gev_ml, prev_gev, full_gev, init_gev)
    return tn, gev


def _fit_or_best(fitter, train, n_min, rng, init=None) -> FittedModel:
    """Run ``fitter``; a search that did not converge still yields its best point."""
    if isinstance(init, FittedModel):
        init = init.coefficients
    try:
        return fitter(train, init=init, n_min=n_min, rng=rng)
    except ConvergenceError as exc:
        return exc.best


def _relabel(model: FittedModel, source: str) -> FittedModel:
    return FittedModel(**{**{f.name: getattr(model, f.name) for f in fields(model)}, "source": source})
