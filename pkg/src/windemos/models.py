"""Forecast producers and the rolling-window verification experiment.

Each verification day refits every model on the pooled cases of the
preceding ``window_days`` calendar days, predicts that day's cases and
scores them. Per-case results are kept in a :class:`CaseRecords` column
store; every summary (score table, histograms, station table, skill-score
curves) is computed from it alone.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .data import Dataset
from .dists import EmpiricalEnsemble, GevDist, RegimeSwitching, TruncatedNormal
from .estimation import (
    N_MIN,
    ConvergenceError,
    FittedModel,
    GevCoefficients,
    TnCoefficients,
    TrainingSet,
    _fit_or_best,
    _relabel,
    ensemble_summaries,
    fit_gev_ml,
    fit_regime_switching,
    fit_tn_min_crps,
)
from .scoring import (
    Histogram,
    ScoreRow,
    ScoreTable,
    Weight,
    crps,
    pit_histogram,
    twcrps,
    twcrpss,
    verification_ranks,
)

__all__ = [
    "FORECASTERS",
    "ConfigError",
    "ExperimentConfig",
    "predict_tn",
    "predict_gev",
    "predict_regime",
    "climatology_forecast",
    "CaseRecords",
    "DayFit",
    "ExperimentResult",
    "run_rolling_experiment",
    "select_theta",
    "score_table",
    "station_table",
    "calibration_histograms",
    "twcrpss_curve",
]

log = logging.getLogger(__name__)

FORECASTERS = ("climatology", "ensemble", "tn", "gev", "combination")
N_PARAMS = 5
_DEFAULT_GRID = tuple(float(v) for v in np.arange(5.0, 10.01, 0.5))
_DEFAULT_CURVE = tuple(float(v) for v in np.arange(6.0, 20.01, 0.5))


class ConfigError(ValueError):
    """Invalid experiment settings; ``errors`` lists every violated field."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


def _ascending_positive(values) -> bool:
    v = list(values)
    return all(x > 0 for x in v) and all(a < b for a, b in zip(v, v[1:]))


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings of the rolling-window experiment.

    ``verification_days`` keeps only the last that many eligible days (a day
    is eligible once a full window precedes it); ``None`` verifies them all.
    ``gaussian_weights`` adds twCRPS columns with Gaussian-CDF weights given
    as ``(mu, sigma)`` pairs.
    """

    window_days: int = 30
    theta: float = 7.5
    lead_days: int = 1
    twcrps_thresholds: tuple[float, ...] = (10.0, 12.0, 15.0)
    theta_grid: tuple[float, ...] = _DEFAULT_GRID
    seed: int = 0
    min_train: int = N_MIN
    warm_start: bool = False
    jobs: int = 1
    verification_days: int | None = None
    gaussian_weights: tuple[tuple[float, float], ...] = ()
    curve_thresholds: tuple[float, ...] = _DEFAULT_CURVE
    pit_bins: int = 20

    def __post_init__(self):
        for name in ("twcrps_thresholds", "theta_grid", "curve_thresholds"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(
            self, "gaussian_weights", tuple((float(m), float(s)) for m, s in self.gaussian_weights)
        )
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    def validate(self) -> list[str]:
        errors = []
        if self.window_days < 1:
            errors.append("window_days must be >= 1")
        if not (math.isfinite(self.theta) and self.theta >= 0):
            errors.append("theta must be finite and >= 0")
        if self.lead_days < 1:
            errors.append("lead_days must be >= 1")
        if not self.twcrps_thresholds or not _ascending_positive(self.twcrps_thresholds):
            errors.append("twcrps_thresholds must be positive and strictly ascending")
        if not self.theta_grid:
            errors.append("theta_grid must not be empty")
        elif any(not (math.isfinite(t) and t >= 0) for t in self.theta_grid):
            errors.append("theta_grid values must be finite and >= 0")
        if self.min_train < 1:
            errors.append("min_train must be >= 1")
        if self.jobs < 1:
            errors.append("jobs must be >= 1")
        if self.verification_days is not None and self.verification_days < 1:
            errors.append("verification_days must be >= 1")
        if any(not (math.isfinite(m) and s > 0) for m, s in self.gaussian_weights):
            errors.append("gaussian_weights need a finite mean and positive sigma")
        if not self.curve_thresholds or not _ascending_positive(self.curve_thresholds):
            errors.append("curve_thresholds must be positive and strictly ascending")
        if self.pit_bins < 2:
            errors.append("pit_bins must be >= 2")
        return errors

    def replace(self, **changes) -> "ExperimentConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return ExperimentConfig(**d)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = [list(x) if isinstance(x, tuple) else x for x in v]
        return d


# ---------------------------------------------------------------------------
# forecast producers

def _coef(c):
    return c.coefficients if isinstance(c, FittedModel) else c


def predict_tn(coeffs, members) -> TruncatedNormal:
    """Truncated normal forecast ``N_[0,inf)(a + b*x_bar, c + d*s2)``."""
    c = _coef(coeffs)
    x_bar, s2, _ = ensemble_summaries(members)
    var = c.c + c.d * np.asarray(s2)
    if np.any(var <= 0):
        raise ValueError("predictive variance c + d*s2 must be positive")
    return TruncatedNormal(c.a + c.b * np.asarray(x_bar), np.sqrt(var))


def predict_gev(coeffs, members) -> GevDist:
    """GEV forecast with location and scale linear in the ensemble mean."""
    c = _coef(coeffs)
    x_bar, _, _ = ensemble_summaries(members)
    x_bar = np.asarray(x_bar)
    scale = c.sigma0 + c.sigma1 * x_bar
    if np.any(scale <= 0):
        raise ValueError("GEV scale sigma0 + sigma1*x_bar must be positive")
    return GevDist(c.mu0 + c.mu1 * x_bar, scale, np.full(x_bar.shape, c.xi) if x_bar.ndim else c.xi)


def predict_regime(tn, gev, theta: float, members) -> RegimeSwitching:
    """TN forecast where the ensemble median is below ``theta``, GEV otherwise."""
    m = np.atleast_2d(np.asarray(members, dtype=float))
    _, _, x_med = ensemble_summaries(m)
    high = x_med >= theta
    return RegimeSwitching(high, predict_tn(tn, m[~high]), predict_gev(gev, m[high]))


def climatology_forecast(observations) -> EmpiricalEnsemble:
    """Empirical distribution of the pooled training-window observations."""
    obs = np.asarray(observations, dtype=float).ravel()
    if obs.size == 0:
        raise ValueError("climatology needs at least one observation")
    return EmpiricalEnsemble(obs)


# ---------------------------------------------------------------------------
# per-case records

_BASE_COLUMNS = ["station_id", "valid_date", "lead_days", "forecaster", "dist_kind"] + [
    f"param{i + 1}" for i in range(N_PARAMS)
] + ["observation", "median", "q10", "q90", "pit", "crps"]


def _gauss_name(mu: float, sigma: float) -> str:
    return f"twcrps_g{mu:g}_{sigma:g}"


@dataclass(frozen=True, eq=False)
class CaseRecords:
    """Column store of per-case forecasts and scores.

    ``dist_kind`` is ``tn`` (params mu, sigma), ``gev`` (mu, sigma, xi),
    ``ensemble`` or ``climatology`` (param1 = number of members). For the
    discrete forecasts ``pit`` is the rank-based value
    ``(rank - 1 + U) / (k + 1)`` with ``U`` uniform, so the verification rank
    is ``floor(pit * (k + 1)) + 1``.
    """

    station_id: np.ndarray
    valid_date: np.ndarray
    lead_days: np.ndarray
    forecaster: np.ndarray
    dist_kind: np.ndarray
    params: np.ndarray
    observation: np.ndarray
    median: np.ndarray
    q10: np.ndarray
    q90: np.ndarray
    pit: np.ndarray
    crps: np.ndarray
    twcrps: dict = field(default_factory=dict)
    twcrps_gauss: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.crps.size

    @property
    def thresholds(self) -> tuple[float, ...]:
        return tuple(sorted(self.twcrps))

    @property
    def columns(self) -> list[str]:
        return (
            _BASE_COLUMNS
            + [f"twcrps_r{r:g}" for r in self.thresholds]
            + [_gauss_name(*g) for g in self.twcrps_gauss]
        )

    def select(self, mask) -> "CaseRecords":
        kw = {
            f.name: getattr(self, f.name)[mask]
            for f in fields(self)
            if f.name not in ("twcrps", "twcrps_gauss")
        }
        kw["twcrps"] = {r: v[mask] for r, v in self.twcrps.items()}
        kw["twcrps_gauss"] = {g: v[mask] for g, v in self.twcrps_gauss.items()}
        return CaseRecords(**kw)

    def of(self, forecaster: str) -> "CaseRecords":
        mask = self.forecaster == forecaster
        if not mask.any():
            raise KeyError(f"no records for forecaster {forecaster!r}")
        return self.select(mask)

    @classmethod
    def concat(cls, parts: list["CaseRecords"]) -> "CaseRecords":
        kw = {
            f.name: np.concatenate([getattr(p, f.name) for p in parts])
            for f in fields(cls)
            if f.name not in ("twcrps", "twcrps_gauss")
        }
        kw["twcrps"] = {r: np.concatenate([p.twcrps[r] for p in parts]) for r in parts[0].twcrps}
        kw["twcrps_gauss"] = {
            g: np.concatenate([p.twcrps_gauss[g] for p in parts]) for g in parts[0].twcrps_gauss
        }
        return cls(**kw)

    def forecast(self):
        """Rebuild the parametric forecasts (TN, GEV or a mix of both)."""
        kind = self.dist_kind
        if np.any((kind != "tn") & (kind != "gev")):
            raise ValueError("only tn and gev records can be rebuilt as distributions")
        high = kind == "gev"
        p = self.params
        tn = TruncatedNormal(p[~high, 0], p[~high, 1])
        gev = GevDist(p[high, 0], p[high, 1], p[high, 2])
        if high.all():
            return gev
        if not high.any():
            return tn
        return RegimeSwitching(high, tn, gev)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        dates = self.valid_date.astype(str)
        extra = [self.twcrps[r] for r in self.thresholds] + list(self.twcrps_gauss.values())
        num = np.column_stack(
            [self.params, self.observation, self.median, self.q10, self.q90, self.pit, self.crps] + extra
        ).tolist()
        for i in range(len(self)):
            w.writerow(
                [self.station_id[i], dates[i], int(self.lead_days[i]), self.forecaster[i], self.dist_kind[i]]
                + ["" if math.isnan(v) else repr(v) for v in num[i]]
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CaseRecords":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header[: len(_BASE_COLUMNS)] != _BASE_COLUMNS:
            raise ValueError("not a per-case forecast file")
        rest = header[len(_BASE_COLUMNS):]
        rows = [row for row in reader if row]
        cols = list(zip(*rows)) if rows else [()] * len(header)

        def num(j):
            return np.array([math.nan if v == "" else float(v) for v in cols[j]], dtype=float)

        twc, gauss = {}, {}
        for j, name in enumerate(rest, start=len(_BASE_COLUMNS)):
            if name.startswith("twcrps_r"):
                twc[float(name[len("twcrps_r"):])] = num(j)
            elif name.startswith("twcrps_g"):
                mu, sigma = name[len("twcrps_g"):].split("_")
                gauss[(float(mu), float(sigma))] = num(j)
            else:
                raise ValueError(f"unknown column {name!r}")
        return cls(
            np.array(cols[0], dtype=object),
            np.array(cols[1], dtype="datetime64[D]"),
            np.array(cols[2], dtype=np.int64),
            np.array(cols[3], dtype=object),
            np.array(cols[4], dtype=object),
            np.column_stack([num(5 + i) for i in range(N_PARAMS)]) if rows else np.empty((0, N_PARAMS)),
            num(10),
            num(11),
            num(12),
            num(13),
            num(14),
            num(15),
            twc,
            gauss,
        )


def _ordered(names) -> list[str]:
    present = set(names)
    return [f for f in FORECASTERS if f in present] + sorted(present - set(FORECASTERS))


def score_table(records: CaseRecords, thresholds=None) -> ScoreTable:
    """Mean CRPS, MAE, 80% coverage and width, and mean twCRPS per forecaster."""
    thresholds = tuple(records.thresholds if thresholds is None else thresholds)
    rows = []
    for name in _ordered(records.forecaster.tolist()):
        r = records.of(name)
        rows.append(
            ScoreRow.from_cases(
                name,
                r.crps,
                np.abs(r.median - r.observation),
                (r.observation >= r.q10) & (r.observation <= r.q90),
                r.q90 - r.q10,
                {t: r.twcrps[t] for t in thresholds},
                {_gauss_name(*g): v for g, v in r.twcrps_gauss.items()},
            )
        )
    return ScoreTable(rows, thresholds)


def station_table(records: CaseRecords) -> str:
    """CSV of mean CRPS per station and forecaster."""
    names = _ordered(records.forecaster.tolist())
    stations = sorted(set(records.station_id.tolist()))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["station_id"] + names + ["n_cases"])
    for s in stations:
        at = records.station_id == s
        means, n = [], 0
        for name in names:
            v = records.crps[at & (records.forecaster == name)]
            n = v.size
            means.append(repr(math.fsum(v) / v.size) if v.size else "")
        w.writerow([s] + means + [n])
    return buf.getvalue()


def calibration_histograms(records: CaseRecords, bins: int = 20) -> dict[str, Histogram]:
    """Verification rank histogram of the raw ensemble, PIT histograms of the rest."""
    out = {}
    for name in _ordered(records.forecaster.tolist()):
        r = records.of(name)
        if name in ("ensemble",):
            k = int(r.params[0, 0])
            ranks = np.floor(r.pit * (k + 1)).astype(int) + 1
            counts = np.bincount(np.clip(ranks, 1, k + 1), minlength=k + 2)[1:]
            edges = np.arange(1, k + 2, dtype=float)
            out["rank_ensemble"] = Histogram(edges - 0.5, edges + 0.5, counts)
        else:
            out[f"pit_{name}"] = pit_histogram(r.pit, bins)
    return out


def twcrpss_curve(records: CaseRecords, forecaster: str, reference: str = "tn", thresholds=_DEFAULT_CURVE):
    """twCRPSS of ``forecaster`` against ``reference`` for indicator weights at each r."""
    f = records.of(forecaster)
    ref = records.of(reference)
    if not (
        np.array_equal(f.station_id, ref.station_id) and np.array_equal(f.valid_date, ref.valid_date)
    ):
        raise ValueError("forecaster and reference records are not aligned")
    fd, rd, y = f.forecast(), ref.forecast(), f.observation
    thresholds = np.asarray(thresholds, dtype=float)
    values = np.array(
        [
            twcrpss(twcrps(fd, y, Weight.indicator(r)), twcrps(rd, y, Weight.indicator(r)))
            for r in thresholds
        ]
    )
    return thresholds, values


# ---------------------------------------------------------------------------
# rolling experiment

@dataclass
class DayFit:
    """Fitted models of one verification day."""

    date: np.datetime64
    n_train: int
    tn: FittedModel
    gev: FittedModel
    regime_tn: FittedModel
    regime_gev: FittedModel

    def models(self) -> dict[str, FittedModel]:
        return {"tn": self.tn, "gev": self.gev, "regime_tn": self.regime_tn, "regime_gev": self.regime_gev}


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: CaseRecords
    table: ScoreTable
    histograms: dict[str, Histogram]
    curves: dict[str, tuple[np.ndarray, np.ndarray]]
    fits: list[DayFit]
    diagnostics: dict


@dataclass(frozen=True)
class _Layout:
    """Lead-filtered cases sorted by (date, station) with window bookkeeping."""

    data: Dataset
    x_bar: np.ndarray
    s2: np.ndarray
    x_med: np.ndarray
    days: list  # (date, train_slice, test_slice)
    skipped: list  # (date, reason)


def _layout(dataset: Dataset, config: ExperimentConfig) -> _Layout:
    lead = dataset.select(dataset.lead_days == config.lead_days)
    if len(lead) == 0:
        raise ValueError(f"no cases with lead_days = {config.lead_days}")
    order = np.lexsort((lead.station_id.astype(str), lead.valid_date))
    data = lead.select(order)
    dup = (np.diff(data.valid_date.astype(np.int64)) == 0) & (data.station_id[1:] == data.station_id[:-1])
    if dup.any():
        i = int(np.flatnonzero(dup)[0])
        raise ValueError(f"duplicate case for station {data.station_id[i]} on {data.valid_date[i]}")
    x_bar, s2, x_med = ensemble_summaries(data.members)
    dates = data.valid_date
    unique = np.unique(dates)
    m = np.timedelta64(config.window_days, "D")
    eligible = unique[unique - m >= unique[0]]
    if config.verification_days is not None:
        eligible = eligible[-config.verification_days:]
    days, skipped = [], []
    for d in eligible:
        lo = np.searchsorted(dates, d - m, "left")
        hi = np.searchsorted(dates, d, "left")
        end = np.searchsorted(dates, d, "right")
        if hi - lo < config.min_train:
            skipped.append((d, f"window holds {hi - lo} pairs, fewer than {config.min_train}"))
            continue
        days.append((d, slice(lo, hi), slice(hi, end)))
    return _Layout(data, x_bar, s2, x_med, days, skipped)


def _day_seed(seed: int, date) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(int(date.astype(np.int64)) + 100_000,))


def _fit_day(task):
    """Fit all models for one day; runs in worker processes."""
    date, train, theta, n_min, seed, init, regime_only = task
    rngs = [np.random.default_rng(s) for s in _day_seed(seed, date).spawn(4)]
    init = init or {}
    nonconv = 0

    def fit(fitter, key, rng):
        nonlocal nonconv
        try:
            return fitter(train, init=_init_coef(init.get(key)), n_min=n_min, rng=rng)
        except ConvergenceError as exc:
            nonconv += 1
            return exc.best

    if regime_only:
        tn = gev = None
    else:
        tn = fit(fit_tn_min_crps, "tn", rngs[0])
        gev = fit(fit_gev_ml, "gev", rngs[1])
    reg_rng = rngs[2]
    r_tn, r_gev = fit_regime_switching(
        train,
        theta,
        full=(tn, gev),
        n_min=n_min,
        rng=reg_rng,
        init=(init.get("regime_tn"), init.get("regime_gev")),
    )
    for mod in (r_tn, r_gev):
        mod.window_end = str(date)
    for mod in (tn, gev):
        if mod is not None:
            mod.window_end = str(date)
    return tn, gev, r_tn, r_gev, nonconv


def _init_coef(model):
    return model.coefficients if isinstance(model, FittedModel) else model


def _run_map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def _fit_all(lay: _Layout, config: ExperimentConfig, theta: float, regime_only: bool = False):
    def task(d, tr, init):
        train = TrainingSet(lay.x_bar[tr], lay.s2[tr], lay.x_med[tr], lay.data.observation[tr], lay.data.k)
        return (d, train, theta, config.min_train, config.seed, init, regime_only)

    if config.warm_start:
        # each search starts from the previous day's optimum, so days run in order
        out, init = [], None
        for d, tr, _ in lay.days:
            res = _fit_day(task(d, tr, init))
            out.append(res)
            init = dict(zip(("tn", "gev", "regime_tn", "regime_gev"), res[:4]))
        raw = out
    else:
        raw = _run_map(_fit_day, [task(d, tr, None) for d, tr, _ in lay.days], config.jobs)

    # A branch whose stratum was too small, or whose coefficients give a
    # nonpositive scale on the day's cases, takes the previous day's branch,
    # then the full-window fit.
    fits, nonconv, prev = [], 0, (None, None)
    for (d, tr, te), (tn, gev, r_tn, r_gev, nc) in zip(lay.days, raw):
        nonconv += nc
        x_bar, s2, high = lay.x_bar[te], lay.s2[te], lay.x_med[te] >= theta
        resolved = []
        for mod, p, full, sel in zip((r_tn, r_gev), prev, (tn, gev), (~high, high)):
            usable = mod.source == "fit" and _valid(mod, x_bar[sel], s2[sel])
            if not usable and p is not None and _valid(p, x_bar[sel], s2[sel]):
                mod = _fallback(p, "previous", mod.strata, d)
            elif not usable and full is not None and _valid(full, x_bar[sel], s2[sel]):
                mod = _fallback(full, "full", mod.strata, d)
            resolved.append(mod)
        prev = tuple(resolved)
        fits.append(DayFit(d, tr.stop - tr.start, tn, gev, resolved[0], resolved[1]))
    return fits, nonconv


def _valid(model: FittedModel, x_bar, s2) -> bool:
    if model.kind == "tn":
        return bool(np.all(np.isfinite(_tn_params(model.coefficients, x_bar, s2)[1])))
    return bool(np.all(np.isfinite(_gev_params(model.coefficients, x_bar)[1])))


def _fallback(model: FittedModel, source: str, strata, date) -> FittedModel:
    out = _relabel(model, source)
    out.strata = dict(strata)
    out.window_end = str(date)
    return out


def _ensemble_rank_pit(members, y, rng):
    k = members.shape[1]
    ranks = verification_ranks(members, y, rng)
    return (ranks - 1 + rng.uniform(size=ranks.shape)) / (k + 1)


def _records(name, kind, data, idx, params, f, config, pit_values):
    y = data.observation[idx]
    n = y.size
    q10, q90 = f.quantile(0.1), f.quantile(0.9)
    return CaseRecords(
        data.station_id[idx],
        data.valid_date[idx],
        data.lead_days[idx],
        np.full(n, name, dtype=object),
        np.asarray(kind, dtype=object) if np.ndim(kind) else np.full(n, kind, dtype=object),
        params,
        y,
        np.broadcast_to(f.median(), (n,)).astype(float),
        np.broadcast_to(q10, (n,)).astype(float),
        np.broadcast_to(q90, (n,)).astype(float),
        np.asarray(pit_values, dtype=float),
        np.broadcast_to(crps(f, y), (n,)).astype(float),
        {r: np.broadcast_to(twcrps(f, y, Weight.indicator(r)), (n,)).astype(float) for r in config.twcrps_thresholds},
        {g: np.broadcast_to(twcrps(f, y, Weight.gaussian_cdf(*g)), (n,)).astype(float) for g in config.gaussian_weights},
    )


def _params(*cols, n):
    p = np.full((n, N_PARAMS), np.nan)
    for j, c in enumerate(cols):
        p[:, j] = c
    return p


def _predict_all(lay: _Layout, fits: list[DayFit], theta: float, which=FORECASTERS):
    """Per-case coefficients for every verification case, in layout order."""
    idx = np.concatenate([np.arange(te.start, te.stop) for _, _, te in lay.days]) if lay.days else np.array([], int)
    tn_mu, tn_sig, g_mu, g_sig, g_xi = (np.empty(idx.size) for _ in range(5))
    r_par = np.empty((idx.size, 3))
    high = lay.x_med[idx] >= theta
    pos = 0
    for fit, (_, _, te) in zip(fits, lay.days):
        sl = slice(pos, pos + te.stop - te.start)
        pos = sl.stop
        x_bar, s2 = lay.x_bar[te], lay.s2[te]
        h = high[sl]
        if "tn" in which:
            tn_mu[sl], tn_sig[sl] = _tn_params(fit.tn.coefficients, x_bar, s2)
        if "gev" in which:
            g_mu[sl], g_sig[sl], g_xi[sl] = _gev_params(fit.gev.coefficients, x_bar)
        rmu, rsig = _tn_params(fit.regime_tn.coefficients, x_bar, s2)
        gmu, gsig, gxi = _gev_params(fit.regime_gev.coefficients, x_bar)
        r_par[sl] = np.where(h[:, None], np.column_stack([gmu, gsig, gxi]), np.column_stack([rmu, rsig, np.nan * rmu]))
    return idx, (tn_mu, tn_sig), (g_mu, g_sig, g_xi), high, r_par


def _tn_params(c: TnCoefficients, x_bar, s2):
    var = c.c + c.d * s2
    return c.a + c.b * x_bar, np.sqrt(np.where(var > 0, var, np.nan))


def _gev_params(c: GevCoefficients, x_bar):
    scale = c.sigma0 + c.sigma1 * x_bar
    return c.mu0 + c.mu1 * x_bar, np.where(scale > 0, scale, np.nan), np.full(x_bar.shape, c.xi)


def _drop_invalid(lay: _Layout, fits: list[DayFit], theta: float):
    """Skip days whose fitted coefficients give an invalid forecast for some case."""
    keep_days, keep_fits, skipped = [], [], []
    for fit, day in zip(fits, lay.days):
        te = day[2]
        x_bar, s2 = lay.x_bar[te], lay.s2[te]
        high = lay.x_med[te] >= theta
        bad = []
        for name, model in (("tn", fit.tn), ("regime_tn", fit.regime_tn)):
            if model is not None and not np.all(np.isfinite(_tn_params(model.coefficients, x_bar, s2)[1])):
                bad.append(name)
        for name, model, sel in (("gev", fit.gev, slice(None)), ("regime_gev", fit.regime_gev, high)):
            if model is not None and not np.all(np.isfinite(_gev_params(model.coefficients, x_bar)[1][sel])):
                bad.append(name)
        if bad:
            skipped.append((day[0], f"nonpositive predictive scale from {', '.join(bad)}"))
        else:
            keep_days.append(day)
            keep_fits.append(fit)
    lay = _Layout(lay.data, lay.x_bar, lay.s2, lay.x_med, keep_days, lay.skipped + skipped)
    return lay, keep_fits


def _combination_records(lay, idx, high, r_par, config):
    data = lay.data
    tn = TruncatedNormal(r_par[~high, 0], r_par[~high, 1])
    gev = GevDist(r_par[high, 0], r_par[high, 1], r_par[high, 2])
    f = RegimeSwitching(high, tn, gev)
    kind = np.where(high, "gev", "tn").astype(object)
    return _records("combination", kind, data, idx, r_par_to_params(r_par), f, config, f.cdf(data.observation[idx]))


def r_par_to_params(r_par):
    return _params(r_par[:, 0], r_par[:, 1], r_par[:, 2], n=r_par.shape[0])


def run_rolling_experiment(dataset: Dataset, config: ExperimentConfig = ExperimentConfig()) -> ExperimentResult:
    """Rolling-window fit, prediction and verification of all five forecasters."""
    lay = _layout(dataset, config)
    fits, nonconv = _fit_all(lay, config, config.theta)
    lay, fits = _drop_invalid(lay, fits, config.theta)
    n_eligible = len(lay.days) + len(lay.skipped)
    if not lay.days:
        raise ValueError("no verification day has a usable training window")
    data = lay.data
    idx, (tn_mu, tn_sig), (g_mu, g_sig, g_xi), high, r_par = _predict_all(lay, fits, config.theta)
    y = data.observation[idx]
    n = idx.size

    rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(7,)))
    parts = []

    # climatology: one pooled empirical forecast per day
    clim = []
    for d, tr, te in lay.days:
        f = climatology_forecast(data.observation[tr])
        te_idx = np.arange(te.start, te.stop)
        members = np.broadcast_to(f.members, (te_idx.size, f.members.size))
        p = _params(np.full(te_idx.size, f.members.size), n=te_idx.size)
        pit_values = _ensemble_rank_pit(members, data.observation[te_idx], rng)
        clim.append(_records("climatology", "climatology", data, te_idx, p, f, config, pit_values))
    parts.append(CaseRecords.concat(clim))

    ens = EmpiricalEnsemble(data.members[idx])
    parts.append(
        _records(
            "ensemble", "ensemble", data, idx, _params(np.full(n, data.k), n=n), ens, config,
            _ensemble_rank_pit(data.members[idx], y, rng),
        )
    )
    tn = TruncatedNormal(tn_mu, tn_sig)
    parts.append(_records("tn", "tn", data, idx, _params(tn_mu, tn_sig, n=n), tn, config, tn.cdf(y)))
    gev = GevDist(g_mu, g_sig, g_xi)
    parts.append(_records("gev", "gev", data, idx, _params(g_mu, g_sig, g_xi, n=n), gev, config, gev.cdf(y)))
    parts.append(_combination_records(lay, idx, high, r_par, config))
    records = CaseRecords.concat(parts)

    table = score_table(records, config.twcrps_thresholds)
    histograms = calibration_histograms(records, config.pit_bins)
    curves = {
        name: twcrpss_curve(records, name, "tn", config.curve_thresholds) for name in ("gev", "combination")
    }
    diagnostics = _diagnostics(lay, fits, nonconv, n_eligible, config, records, gev)
    if diagnostics["skipped_fraction"] > 0.05:
        log.warning("%.1f%% of verification days were skipped", 100 * diagnostics["skipped_fraction"])
    return ExperimentResult(config, records, table, histograms, curves, fits, diagnostics)


def _diagnostics(lay, fits, nonconv, n_eligible, config, records, gev: GevDist) -> dict:
    comb = records.of("combination")
    models = [m for f in fits for m in f.models().values()]
    neg = gev.neg_prob()
    return {
        "verification_days": len(lay.days),
        "skipped_days": len(lay.skipped),
        "skipped_fraction": len(lay.skipped) / n_eligible if n_eligible else 0.0,
        "skipped": [{"date": str(d), "reason": why} for d, why in lay.skipped],
        "n_cases": len(comb),
        "gev_branch_share": float(np.mean(comb.dist_kind == "gev")),
        "gev_neg_prob_over_1pct": float(np.mean(neg > 0.01)),
        "gev_neg_prob_max": float(neg.max()) if neg.size else 0.0,
        "nonconverged_fits": nonconv,
        "boundary_fits": sum(m.at_boundary for m in models),
        "regime_fallbacks": {
            src: sum(m.source == src for f in fits for m in (f.regime_tn, f.regime_gev))
            for src in ("previous", "full")
        },
        "theta": config.theta,
        "window_days": config.window_days,
        "lead_days": config.lead_days,
    }


def select_theta(dataset: Dataset, config: ExperimentConfig = ExperimentConfig(), theta_grid=None):
    """Choose the regime threshold with the lowest mean CRPS of the combination.

    Runs the rolling regime-switching forecast for every grid value over
    ``dataset`` (which should be disjoint from the verification period).
    Returns ``(theta, thetas, mean_crps)``; ties go to the smaller threshold.
    """
    grid = config.theta_grid if theta_grid is None else tuple(float(t) for t in theta_grid)
    if not grid:
        raise ValueError("theta grid is empty")
    thetas = np.array(sorted(set(grid)))
    lay0 = _layout(dataset, config)
    if not lay0.days:
        raise ValueError("no selection day has a usable training window")
    scores = []
    for theta in thetas:
        fits, _ = _fit_all(lay0, config, float(theta), regime_only=True)
        lay, fits = _drop_invalid(lay0, fits, float(theta))
        idx, _, _, high, r_par = _predict_all(lay, fits, float(theta), which=())
        y = lay.data.observation[idx]
        f = RegimeSwitching(
            high,
            TruncatedNormal(r_par[~high, 0], r_par[~high, 1]),
            GevDist(r_par[high, 0], r_par[high, 1], r_par[high, 2]),
        )
        scores.append(math.fsum(crps(f, y)) / y.size)
    scores = np.array(scores)
    best = int(np.flatnonzero(scores == scores.min())[0])
    return float(thetas[best]), thetas, scores
