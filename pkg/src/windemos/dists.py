"""Predictive distributions for nonnegative wind speed.

Two parametric families are provided, both vectorised over their
parameters with numpy broadcasting:

* :class:`TruncatedNormal` -- a normal law conditioned on ``Y > 0``.
* :class:`GevDist` -- the generalized extreme value law.

Instances are immutable; every method is a pure function of the parameters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma, log_ndtr, ndtr, ndtri_exp

__all__ = [
    "TruncatedNormal",
    "GevDist",
    "EmpiricalEnsemble",
    "RegimeSwitching",
    "GUMBEL_EPS",
    "norm_cdf",
    "norm_pdf",
]

# |xi| below this uses the Gumbel branch
GUMBEL_EPS = 1e-8

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def norm_cdf(x):
    """Standard normal CDF."""
    return ndtr(x)


def norm_pdf(x):
    """Standard normal density."""
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x - _LOG_SQRT_2PI)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _finite_points(z):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("evaluation points must be finite")
    return z


def _check_prob(p):
    p = np.asarray(p, dtype=float)
    if np.any(~(p > 0.0) | ~(p < 1.0)):
        raise ValueError("probabilities must lie in the open interval (0, 1)")
    return p


class _Dist:
    """Shared array plumbing for the parameter-vectorised families."""

    _fields: tuple[str, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return np.broadcast_shapes(*(getattr(self, f).shape for f in self._fields))

    def __len__(self) -> int:
        shape = self.shape
        if not shape:
            raise TypeError("len() of a scalar distribution")
        return shape[0]

    def __getitem__(self, idx):
        shape = self.shape
        params = {f: np.broadcast_to(getattr(self, f), shape)[idx] for f in self._fields}
        return type(self)(**params)

    def median(self):
        return self.quantile(0.5)


@dataclass(frozen=True)
class TruncatedNormal(_Dist):
    """Normal distribution N(mu, sigma^2) truncated to (0, inf).

    ``mu`` and ``sigma`` are the location and scale of the *untruncated*
    normal. The law is the conditional distribution of ``N(mu, sigma^2)``
    given a positive outcome, so ``cdf(0) == 0``.
    """

    mu: np.ndarray
    sigma: np.ndarray

    _fields = ("mu", "sigma")

    def __post_init__(self):
        mu, sigma = _frozen(self.mu), _frozen(self.sigma)
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError("TruncatedNormal parameters must be finite")
        if np.any(sigma <= 0):
            raise ValueError("TruncatedNormal requires sigma > 0")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def alpha(self):
        """Standardised truncation point, ``-mu / sigma``."""
        return -self.mu / self.sigma

    @property
    def log_mass(self):
        """Log of P(N(mu, sigma^2) > 0), the renormalising constant."""
        return log_ndtr(self.mu / self.sigma)

    def _std(self, z):
        return (z - self.mu) / self.sigma

    def cdf(self, z):
        z = _finite_points(z)
        x = self._std(z)
        # 1 - Q(x)/Q(alpha), computed in log space to survive tiny masses
        out = -np.expm1(log_ndtr(-x) - self.log_mass)
        return np.where(z > 0, np.clip(out, 0.0, 1.0), 0.0)

    def sf(self, z):
        z = _finite_points(z)
        x = self._std(z)
        out = np.exp(np.minimum(log_ndtr(-x) - self.log_mass, 0.0))
        return np.where(z > 0, out, 1.0)

    def logpdf(self, z):
        z = _finite_points(z)
        x = self._std(z)
        out = -0.5 * x * x - _LOG_SQRT_2PI - np.log(self.sigma) - self.log_mass
        return np.where(z > 0, out, -np.inf)

    def pdf(self, z):
        return np.exp(self.logpdf(z))

    def quantile(self, p):
        p = _check_prob(p)
        mu, sigma = self.mu, self.sigma
        # Q(x) = (1 - p) * Q(alpha)
        x = -ndtri_exp(np.log1p(-p) + self.log_mass)
        z = mu + sigma * x
        # one Newton step against the cdf; skipped where the density vanishes
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            zc = np.maximum(z, np.finfo(float).tiny)
            step = (self.cdf(zc) - p) / self.pdf(zc)
            z = np.where(np.isfinite(step) & (np.abs(step) < 1e-3 * sigma), zc - step, zc)
        return np.maximum(z, 0.0) if z.ndim else max(float(z), 0.0)

    def mean(self):
        lam = np.exp(-0.5 * self.alpha ** 2 - _LOG_SQRT_2PI - self.log_mass)
        return self.mu + self.sigma * lam

    def rvs(self, size=None, rng=None):
        rng = np.random.default_rng(rng)
        u = rng.uniform(size=size if size is not None else self.shape)
        u = np.clip(u, 1e-300, 1 - 1e-16)
        return self.quantile(u)


@dataclass(frozen=True)
class GevDist(_Dist):
    """Generalized extreme value distribution.

    ``G(z) = exp(-[1 + xi (z - mu) / sigma]^(-1/xi))`` on the set where the
    bracket is positive; the Gumbel form is used when ``|xi| < GUMBEL_EPS``.
    """

    mu: np.ndarray
    sigma: np.ndarray
    xi: np.ndarray

    _fields = ("mu", "sigma", "xi")

    def __post_init__(self):
        mu, sigma, xi = _frozen(self.mu), _frozen(self.sigma), _frozen(self.xi)
        if not all(np.all(np.isfinite(a)) for a in (mu, sigma, xi)):
            raise ValueError("GevDist parameters must be finite")
        if np.any(sigma <= 0):
            raise ValueError("GevDist requires sigma > 0")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "xi", xi)

    def _gumbel(self):
        return np.abs(self.xi) < GUMBEL_EPS

    def support(self):
        """Lower and upper support bounds (possibly infinite)."""
        xi = self.xi
        with np.errstate(divide="ignore"):
            bound = self.mu - self.sigma / np.where(self._gumbel(), np.inf, xi)
        lower = np.where(xi >= GUMBEL_EPS, bound, -np.inf)
        upper = np.where(xi <= -GUMBEL_EPS, bound, np.inf)
        return lower, upper

    def _neglog_cdf(self, z):
        """``-log G(z)`` with ``inf`` below and ``0`` above the support."""
        x = (z - self.mu) / self.sigma
        xi = self.xi
        gum = self._gumbel()
        xi_safe = np.where(gum, 1.0, xi)
        arg = xi_safe * x
        inside = arg > -1.0
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            t = np.exp(-np.log1p(np.where(inside, arg, 0.0)) / xi_safe)
            t = np.where(inside, t, np.where(xi_safe > 0, np.inf, 0.0))
            return np.where(gum, np.exp(-x), t)

    def cdf(self, z):
        z = _finite_points(z)
        return np.exp(-self._neglog_cdf(z))

    def sf(self, z):
        z = _finite_points(z)
        return -np.expm1(-self._neglog_cdf(z))

    def logpdf(self, z):
        z = _finite_points(z)
        x = (z - self.mu) / self.sigma
        xi = self.xi
        gum = self._gumbel()
        xi_safe = np.where(gum, 1.0, xi)
        arg = xi_safe * x
        inside = arg > -1.0
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            lt = np.log1p(np.where(inside, arg, 0.0))
            gen = -np.log(self.sigma) - (1.0 + 1.0 / xi_safe) * lt - np.exp(-lt / xi_safe)
            gen = np.where(inside, gen, -np.inf)
            gum_val = -np.log(self.sigma) - x - np.exp(-x)
        return np.where(gum, gum_val, gen)

    def pdf(self, z):
        return np.exp(self.logpdf(z))

    def quantile(self, p):
        p = _check_prob(p)
        v = -np.log(p)
        xi = self.xi
        gum = self._gumbel()
        xi_safe = np.where(gum, 1.0, xi)
        x = np.where(gum, -np.log(v), np.expm1(-xi_safe * np.log(v)) / xi_safe)
        return self.mu + self.sigma * x

    def neg_prob(self):
        """Probability mass the law puts on negative wind speeds."""
        return self.cdf(0.0)

    def mean(self):
        xi = self.xi
        if np.any(xi >= 1):
            raise ValueError("GEV mean is infinite for xi >= 1")
        gum = self._gumbel()
        xi_safe = np.where(gum, 1.0, xi)
        x = np.where(gum, np.euler_gamma, (gamma(1.0 - xi_safe) - 1.0) / xi_safe)
        return self.mu + self.sigma * x

    def rvs(self, size=None, rng=None):
        rng = np.random.default_rng(rng)
        u = rng.uniform(size=size if size is not None else self.shape)
        u = np.clip(u, 1e-300, 1 - 1e-16)
        return self.quantile(u)


@dataclass(frozen=True)
class EmpiricalEnsemble:
    """Empirical distribution of a finite sample, e.g. raw ensemble members.

    ``members`` has shape ``(..., k)``; the trailing axis holds the sample
    for each case and is stored sorted. A one-dimensional ``members`` array
    is a single sample shared by every case it is evaluated against.
    """

    members: np.ndarray

    def __post_init__(self):
        m = np.sort(np.array(self.members, dtype=float), axis=-1)
        if m.ndim == 0 or m.shape[-1] < 1:
            raise ValueError("an ensemble needs at least one member")
        if not np.all(np.isfinite(m)):
            raise ValueError("ensemble members must be finite")
        m.setflags(write=False)
        object.__setattr__(self, "members", m)

    @property
    def k(self) -> int:
        return self.members.shape[-1]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.members.shape[:-1]

    @property
    def shared(self) -> bool:
        return self.members.ndim == 1

    def __len__(self) -> int:
        if self.shared:
            raise TypeError("len() of a shared-sample ensemble")
        return self.members.shape[0]

    def __getitem__(self, idx):
        if self.shared:
            return self
        return EmpiricalEnsemble(self.members[idx])

    def cdf(self, z):
        z = _finite_points(z)
        if self.shared:
            return np.searchsorted(self.members, z, side="right") / self.k
        return np.mean(self.members <= z[..., None], axis=-1)

    def cdf_left(self, z):
        """Left limit ``F(z-)``, the fraction of members strictly below ``z``."""
        z = _finite_points(z)
        if self.shared:
            return np.searchsorted(self.members, z, side="left") / self.k
        return np.mean(self.members < z[..., None], axis=-1)

    def quantile(self, p):
        p = _check_prob(p)
        # linear interpolation between order statistics (R type 7)
        q = np.quantile(self.members, p, axis=-1)
        return np.moveaxis(q, 0, -1) if p.ndim else q

    def median(self):
        return self.quantile(0.5)

    def mean(self):
        return self.members.mean(axis=-1)


@dataclass(frozen=True)
class RegimeSwitching:
    """Per-case choice between a truncated normal and a GEV forecast.

    ``use_gev`` is a boolean vector over cases; ``tn`` holds the forecasts
    for the cases where it is False and ``gev`` those where it is True, in
    case order.
    """

    use_gev: np.ndarray
    tn: TruncatedNormal
    gev: GevDist

    def __post_init__(self):
        mask = np.array(self.use_gev, dtype=bool)
        if mask.ndim != 1:
            raise ValueError("use_gev must be a vector")
        n_gev = int(mask.sum())
        if _batch_len(self.gev) != n_gev or _batch_len(self.tn) != mask.size - n_gev:
            raise ValueError("branch forecasts do not match the regime mask")
        mask.setflags(write=False)
        object.__setattr__(self, "use_gev", mask)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.use_gev.shape

    def __len__(self) -> int:
        return self.use_gev.size

    def combine(self, tn_values, gev_values):
        """Scatter per-branch results back into case order."""
        tn_values = np.asarray(tn_values, dtype=float)
        gev_values = np.asarray(gev_values, dtype=float)
        out = np.empty(self.use_gev.shape + tn_values.shape[1:], dtype=float)
        out[~self.use_gev] = tn_values
        out[self.use_gev] = gev_values
        return out

    def apply(self, method: str, *args):
        """Call ``method`` on each branch; array arguments are split by case."""
        mask = self.use_gev

        def split(a, sel):
            a = np.asarray(a)
            return a[sel] if a.ndim and a.shape[0] == mask.size else a

        tn_args = [split(a, ~mask) for a in args]
        gev_args = [split(a, mask) for a in args]
        tn_val = getattr(self.tn, method)(*tn_args) if mask.size - mask.sum() else np.empty(0)
        gev_val = getattr(self.gev, method)(*gev_args) if mask.sum() else np.empty(0)
        return self.combine(tn_val, gev_val)

    def cdf(self, z):
        return self.apply("cdf", z)

    def pdf(self, z):
        return self.apply("pdf", z)

    def logpdf(self, z):
        return self.apply("logpdf", z)

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        if p.ndim == 0:
            return self.apply("quantile", p)
        return self.combine(
            _branch_quantile(self.tn, p), _branch_quantile(self.gev, p)
        )

    def median(self):
        return self.quantile(0.5)


def _batch_len(d) -> int:
    shape = d.shape
    return shape[0] if shape else 1


def _branch_quantile(d, p):
    n = _batch_len(d)
    if n == 0:
        return np.empty((0, p.size))
    return np.stack([np.broadcast_to(d.quantile(pi), (n,)) for pi in p], axis=-1)
