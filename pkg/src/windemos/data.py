"""Forecast case datasets, file formats and the synthetic benchmark.

A :class:`Dataset` is a column store of forecast cases: one row per
(station, valid date, lead time) holding the ``k`` ensemble members and the
verifying daily maximum wind speed (m/s).
"""
from __future__ import annotations

import configparser
import csv
import datetime as dt
import io
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .dists import GevDist, RegimeSwitching, TruncatedNormal

__all__ = [
    "ForecastCase",
    "Dataset",
    "CaseFormatError",
    "read_cases",
    "write_cases",
    "cases_to_csv",
    "cases_from_csv",
    "Station",
    "GridSpec",
    "GriddedEnsembleField",
    "read_grid",
    "write_grid",
    "bilinear_to_station",
    "daily_max_reduce",
    "SyntheticSpec",
    "generate_synthetic",
]


class CaseFormatError(ValueError):
    """A case or grid file does not match its schema."""


@dataclass(frozen=True)
class ForecastCase:
    station_id: str
    valid_date: dt.date
    lead_days: int
    members: np.ndarray
    observation: float

    def __post_init__(self):
        m = np.array(self.members, dtype=float)
        m.setflags(write=False)
        if m.ndim != 1 or not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("members must be a finite nonnegative vector")
        if not (math.isfinite(self.observation) and self.observation >= 0):
            raise ValueError("observation must be finite and nonnegative")
        object.__setattr__(self, "members", m)


@dataclass(frozen=True, eq=False)
class Dataset:
    station_id: np.ndarray
    valid_date: np.ndarray
    lead_days: np.ndarray
    observation: np.ndarray
    members: np.ndarray

    def __post_init__(self):
        sid = np.asarray(self.station_id, dtype=object).ravel()
        dates = np.asarray(self.valid_date, dtype="datetime64[D]").ravel()
        lead = np.asarray(self.lead_days, dtype=np.int64).ravel()
        obs = np.asarray(self.observation, dtype=float).ravel()
        mem = np.asarray(self.members, dtype=float)
        if mem.ndim != 2:
            mem = mem.reshape(obs.size, -1)
        n = obs.size
        if not (sid.size == dates.size == lead.size == mem.shape[0] == n):
            raise ValueError("dataset columns must have equal length")
        if not (np.all(np.isfinite(obs)) and np.all(np.isfinite(mem))):
            raise ValueError("dataset values must be finite")
        if np.any(obs < 0) or np.any(mem < 0):
            raise ValueError("wind speeds must be nonnegative")
        for name, a in zip(("station_id", "valid_date", "lead_days", "observation", "members"),
                           (sid, dates, lead, obs, mem)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def empty(cls, k: int = 50) -> "Dataset":
        return cls([], np.array([], dtype="datetime64[D]"), [], [], np.empty((0, k)))

    @classmethod
    def from_cases(cls, cases: list[ForecastCase]) -> "Dataset":
        if not cases:
            raise ValueError("use Dataset.empty() for an empty dataset")
        return cls(
            [c.station_id for c in cases],
            np.array([np.datetime64(c.valid_date, "D") for c in cases]),
            [c.lead_days for c in cases],
            [c.observation for c in cases],
            np.stack([c.members for c in cases]),
        )

    def __len__(self) -> int:
        return self.observation.size

    @property
    def k(self) -> int:
        return self.members.shape[1]

    def __getitem__(self, i: int) -> ForecastCase:
        return ForecastCase(
            str(self.station_id[i]),
            self.valid_date[i].astype(dt.date),
            int(self.lead_days[i]),
            self.members[i],
            float(self.observation[i]),
        )

    def __iter__(self) -> Iterator[ForecastCase]:
        return (self[i] for i in range(len(self)))

    def select(self, mask) -> "Dataset":
        return Dataset(
            self.station_id[mask],
            self.valid_date[mask],
            self.lead_days[mask],
            self.observation[mask],
            self.members[mask],
        )

    def dates(self) -> np.ndarray:
        return np.unique(self.valid_date)

    def stations(self) -> list[str]:
        return sorted(set(self.station_id.tolist()))

    def equals(self, other: "Dataset") -> bool:
        return (
            len(self) == len(other)
            and self.k == other.k
            and np.array_equal(self.station_id, other.station_id)
            and np.array_equal(self.valid_date, other.valid_date)
            and np.array_equal(self.lead_days, other.lead_days)
            and np.array_equal(self.observation, other.observation)
            and np.array_equal(self.members, other.members)
        )


# ---------------------------------------------------------------------------
# case CSV

_FIXED = ["station_id", "valid_date", "lead_days", "observation"]


def write_cases(dataset: Dataset, path) -> None:
    """Write cases as CSV with shortest round-trip float formatting."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(cases_to_csv(dataset))


def cases_to_csv(dataset: Dataset) -> str:
    bad = [s for s in set(dataset.station_id.tolist()) if any(c in s for c in ',"\r\n')]
    if bad:
        raise ValueError(f"station ids may not contain commas, quotes or newlines: {sorted(bad)[:3]}")
    lines = [",".join(_FIXED + [f"m{j + 1}" for j in range(dataset.k)])]
    dates = dataset.valid_date.astype(str).tolist()
    sid = dataset.station_id.tolist()
    lead = dataset.lead_days.tolist()
    obs = dataset.observation.tolist()
    for i, members in enumerate(dataset.members.tolist()):
        lines.append(f"{sid[i]},{dates[i]},{lead[i]},{obs[i]!r}," + ",".join(map(repr, members)))
    return "\n".join(lines) + "\n"


def read_cases(path) -> Dataset:
    """Read a case CSV written by :func:`write_cases`.

    Raises :class:`CaseFormatError` naming the offending line for malformed
    rows and for files that are not valid UTF-8.
    """
    try:
        text = Path(path).read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CaseFormatError(f"{path}: not valid UTF-8 ({exc.reason} at byte {exc.start})") from None
    return cases_from_csv(text, source=str(path))


def cases_from_csv(text: str, source: str = "<string>") -> Dataset:
    # fast path for well-formed unquoted files; anything odd goes through the
    # checked reader, which reports the offending line
    if '"' not in text:
        try:
            data = _fast_cases(text)
        except ValueError:
            data = None
        if data is not None:
            return data
    return _checked_cases(text, source)


def _fast_cases(text):
    lines = [line for line in text.splitlines() if line]
    if len(lines) < 2:
        return None
    header = lines[0].split(",")
    k = len(header) - len(_FIXED)
    if k < 1 or header != _FIXED + [f"m{j + 1}" for j in range(k)]:
        return None
    heads = [line.split(",", 3) for line in lines[1:]]
    if any(len(h) != 4 for h in heads):
        return None
    ids, dates, leads, rest = zip(*heads)
    values = np.loadtxt(rest, delimiter=",", dtype=float, ndmin=2)
    if values.shape[1] != k + 1:
        return None
    dates = np.array(dates, dtype=str)
    if np.any(np.char.str_len(dates) != 10):
        return None
    if not (np.isfinite(values).all() and (values >= 0).all()):
        return None
    return Dataset(np.array(ids, dtype=object), dates.astype("datetime64[D]"),
                   np.array(leads, dtype=str).astype(np.int64), values[:, 0], values[:, 1:])


def _checked_cases(text, source):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise CaseFormatError(f"{source}: empty file, expected a header") from None
    k = len(header) - len(_FIXED)
    expected = _FIXED + [f"m{j + 1}" for j in range(k)]
    if k < 1 or header != expected:
        raise CaseFormatError(
            f"{source}:1: bad header, expected station_id,valid_date,lead_days,observation,m1,...,mk"
        )
    rows, lines = [], []
    for row in reader:
        if not row:
            continue
        if len(row) != len(header):
            raise CaseFormatError(f"{source}:{reader.line_num}: expected {len(header)} fields, got {len(row)}")
        rows.append(row)
        lines.append(reader.line_num)
    if not rows:
        return Dataset.empty(k)
    table = np.array(rows, dtype=str)

    def fail(mask, what):
        i = int(np.flatnonzero(mask)[0])
        raise CaseFormatError(f"{source}:{lines[i]}: {what}")

    def convert(col, dtype, what):
        try:
            return col.astype(dtype)
        except ValueError:
            for i, row in enumerate(col.reshape(len(col), -1)):
                for v in row:
                    try:
                        np.asarray(v).astype(dtype)
                    except ValueError:
                        raise CaseFormatError(f"{source}:{lines[i]}: {what}: {str(v)!r}") from None
            raise

    date_col = table[:, 1]
    if np.any(np.char.str_len(date_col) != 10):
        fail(np.char.str_len(date_col) != 10, f"valid_date must be YYYY-MM-DD")
    dates = convert(date_col, "datetime64[D]", "bad valid_date")
    lead = convert(table[:, 2], np.int64, "bad lead_days")
    values = convert(table[:, 3:], float, "bad number")
    ok = np.isfinite(values).all(axis=1) & (values >= 0).all(axis=1)
    if not ok.all():
        fail(~ok, "wind speeds must be finite and nonnegative")
    return Dataset(table[:, 0].astype(object), dates, lead, values[:, 0], values[:, 1:])


# ---------------------------------------------------------------------------
# gridded ensemble output

@dataclass(frozen=True)
class Station:
    station_id: str
    latitude: float
    longitude: float


@dataclass(frozen=True)
class GridSpec:
    """Regular latitude-longitude grid; index (i, j) sits at (lat0 + i*dlat, lon0 + j*dlon)."""

    lat0: float
    lon0: float
    dlat: float
    dlon: float
    nlat: int
    nlon: int

    def __post_init__(self):
        if self.dlat <= 0 or self.dlon <= 0 or self.nlat < 2 or self.nlon < 2:
            raise ValueError("grid needs positive spacing and at least 2x2 points")

    def latitudes(self) -> np.ndarray:
        return self.lat0 + self.dlat * np.arange(self.nlat)

    def longitudes(self) -> np.ndarray:
        return self.lon0 + self.dlon * np.arange(self.nlon)


@dataclass(frozen=True, eq=False)
class GriddedEnsembleField:
    """Ensemble output on a grid; ``values`` has shape (nlat, nlon, k)."""

    grid: GridSpec
    values: np.ndarray
    run_date: dt.date
    lead_hours: int

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 3 or v.shape[:2] != (self.grid.nlat, self.grid.nlon):
            raise ValueError("values must have shape (nlat, nlon, k)")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def k(self) -> int:
        return self.values.shape[2]


def bilinear_to_station(field: GriddedEnsembleField, station: Station) -> np.ndarray:
    """Interpolate every member to the station from its four surrounding grid points."""
    g = field.grid
    fi = (station.latitude - g.lat0) / g.dlat
    fj = (station.longitude - g.lon0) / g.dlon
    eps = 1e-9
    if not (-eps <= fi <= g.nlat - 1 + eps and -eps <= fj <= g.nlon - 1 + eps):
        raise ValueError(
            f"station {station.station_id} at ({station.latitude}, {station.longitude}) lies outside the grid"
        )
    fi = min(max(fi, 0.0), g.nlat - 1.0)
    fj = min(max(fj, 0.0), g.nlon - 1.0)
    i0 = min(int(math.floor(fi)), g.nlat - 2)
    j0 = min(int(math.floor(fj)), g.nlon - 2)
    u, v = fi - i0, fj - j0
    f = field.values
    return (
        (1 - u) * (1 - v) * f[i0, j0]
        + (1 - u) * v * f[i0, j0 + 1]
        + u * (1 - v) * f[i0 + 1, j0]
        + u * v * f[i0 + 1, j0 + 1]
    )


def daily_max_reduce(member_steps: Mapping[int, np.ndarray], lead_day: int = 1, step_hours: int = 3) -> np.ndarray:
    """Per-member maximum over the forecast steps covering day ``lead_day``.

    ``member_steps`` maps lead time in hours to member values. Day ``L``
    covers hours ``24(L-1) + step_hours`` through ``24L``.
    """
    if lead_day < 1 or step_hours < 1 or 24 % step_hours:
        raise ValueError("lead_day must be >= 1 and step_hours must divide 24")
    hours = range(24 * (lead_day - 1) + step_hours, 24 * lead_day + 1, step_hours)
    missing = [h for h in hours if h not in member_steps]
    if missing:
        raise ValueError(f"missing forecast steps at lead hours {missing}")
    return np.max(np.stack([np.asarray(member_steps[h], dtype=float) for h in hours]), axis=0)


def write_grid(field: GriddedEnsembleField, path) -> None:
    """Plain-text grid: ``key value`` header lines, then one line per grid point."""
    g = field.grid
    lines = [
        "# windemos grid v1",
        f"run_date {field.run_date.isoformat()}",
        f"lead_hours {field.lead_hours}",
        f"lat0 {g.lat0!r}",
        f"lon0 {g.lon0!r}",
        f"dlat {g.dlat!r}",
        f"dlon {g.dlon!r}",
        f"nlat {g.nlat}",
        f"nlon {g.nlon}",
        f"members {field.k}",
    ]
    for i in range(g.nlat):
        for j in range(g.nlon):
            lines.append(f"{i} {j} " + " ".join(repr(v) for v in field.values[i, j].tolist()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_grid(path) -> GriddedEnsembleField:
    keys = ("run_date", "lead_hours", "lat0", "lon0", "dlat", "dlon", "nlat", "nlon", "members")
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# windemos grid"):
        raise CaseFormatError(f"{path}:1: not a grid file")
    head = {}
    for lineno, line in enumerate(lines[1 : 1 + len(keys)], start=2):
        parts = line.split()
        if len(parts) != 2 or parts[0] != keys[lineno - 2]:
            raise CaseFormatError(f"{path}:{lineno}: expected '{keys[lineno - 2]} <value>'")
        head[parts[0]] = parts[1]
    try:
        grid = GridSpec(
            float(head["lat0"]), float(head["lon0"]), float(head["dlat"]), float(head["dlon"]),
            int(head["nlat"]), int(head["nlon"]),
        )
        k = int(head["members"])
        run_date = dt.date.fromisoformat(head["run_date"])
        lead = int(head["lead_hours"])
    except ValueError as exc:
        raise CaseFormatError(f"{path}: bad grid header: {exc}") from None
    values = np.full((grid.nlat, grid.nlon, k), np.nan)
    body = lines[1 + len(keys):]
    for lineno, line in enumerate(body, start=2 + len(keys)):
        if not line.strip():
            continue
        parts = line.split()
        try:
            i, j = int(parts[0]), int(parts[1])
            vals = [float(v) for v in parts[2:]]
        except (ValueError, IndexError):
            raise CaseFormatError(f"{path}:{lineno}: malformed grid row") from None
        if len(vals) != k or not (0 <= i < grid.nlat and 0 <= j < grid.nlon):
            raise CaseFormatError(f"{path}:{lineno}: grid row does not match header")
        values[i, j] = vals
    if np.isnan(values).any():
        raise CaseFormatError(f"{path}: grid has missing points")
    return GriddedEnsembleField(grid, values, run_date, lead)


# ---------------------------------------------------------------------------
# synthetic benchmark

@dataclass(frozen=True)
class SyntheticSpec:
    """Settings for the synthetic wind benchmark.

    A latent daily wind level per station drives both the observation and
    the ensemble. It is the station's typical level (uniform on
    ``[level_low, level_high]``) times a lognormal factor made of a seasonal
    cycle (``seasonal_amplitude``, log scale) and AR(1) weather anomalies
    (``anomaly_sd``, log scale, lag-one correlation ``persistence``) shared
    partly across stations.
    While ``level + bias < regime_theta`` observations follow a truncated
    normal around the level; above it they follow a GEV with shape
    ``tail_shape`` whose median sits ``high_shift`` above the level.
    ``regime_theta`` is therefore on the ensemble's (biased) scale, where the
    regime-switching model places its threshold.

    Members are draws from the same law, shrunk towards the level by
    ``dispersion_factor`` and offset by ``bias``.
    """

    n_stations: int = 50
    n_days: int = 365
    k: int = 50
    seed: int = 0
    bias: float = -1.0
    dispersion_factor: float = 0.4
    regime_theta: float = 7.5
    tail_shape: float = 0.2
    high_shift: float = 0.5
    start_date: str = "2010-02-01"
    leads: tuple[int, ...] = (1,)
    lead_error: float = 0.4
    level_low: float = 4.5
    level_high: float = 8.0
    seasonal_amplitude: float = 0.15
    anomaly_sd: float = 0.35
    persistence: float = 0.7

    def __post_init__(self):
        errors = []
        if self.n_stations < 1 or self.n_days < 1 or self.k < 2:
            errors.append("n_stations, n_days must be >= 1 and k >= 2")
        if not 0.0 < self.dispersion_factor <= 1.0:
            errors.append("dispersion_factor must lie in (0, 1]")
        if not -0.4 < self.tail_shape < 0.9:
            errors.append("tail_shape must lie in (-0.4, 0.9)")
        if not 0.0 <= self.persistence < 1.0:
            errors.append("persistence must lie in [0, 1)")
        if not self.leads or any(int(L) < 1 for L in self.leads):
            errors.append("leads must be positive integers")
        try:
            dt.date.fromisoformat(self.start_date)
        except ValueError:
            errors.append("start_date must be an ISO date")
        if errors:
            raise ValueError("; ".join(errors))
        object.__setattr__(self, "leads", tuple(int(L) for L in self.leads))

    @classmethod
    def from_config(cls, text: str, section: str = "synthetic") -> "SyntheticSpec":
        """Build from an INI-style ``[synthetic]`` section; unknown keys are errors."""
        cp = configparser.ConfigParser()
        cp.read_string(text)
        if not cp.has_section(section):
            raise ValueError(f"missing [{section}] section")
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        unknown = [key for key in cp[section] if key not in types]
        if unknown:
            raise ValueError(f"unknown synthetic settings: {', '.join(unknown)}")
        for key, raw in cp[section].items():
            default = getattr(cls, key)
            if isinstance(default, tuple):
                kwargs[key] = tuple(int(v) for v in raw.replace(",", " ").split())
            elif isinstance(default, bool):
                kwargs[key] = cp[section].getboolean(key)
            else:
                kwargs[key] = type(default)(raw)
        return cls(**kwargs)

    def to_config(self, section: str = "synthetic") -> str:
        lines = [f"[{section}]"]
        for key, value in asdict(self).items():
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def _tn_scale(level):
    return 0.5 + 0.12 * level


def _gev_scale(level):
    # a Gumbel law with this scale has the standard deviation of the low-regime law
    return _tn_scale(level) * math.sqrt(6.0) / math.pi


def _truth_laws(spec: SyntheticSpec, level):
    """Observation law for each latent level: (use_gev mask, TN law, GEV law)."""
    high = level + spec.bias >= spec.regime_theta
    xi = spec.tail_shape
    sig = _gev_scale(level)
    # place the GEV median at level + high_shift
    med_offset = np.expm1(-xi * math.log(math.log(2.0))) / xi if abs(xi) > 1e-8 else -math.log(math.log(2.0))
    mu = level + spec.high_shift - sig * med_offset
    tn = TruncatedNormal(level[~high], _tn_scale(level[~high]))
    gev = GevDist(mu[high], sig[high], np.full(int(high.sum()), xi))
    return RegimeSwitching(high, tn, gev)


def _ar1(rng, shape, phi):
    """Unit-variance AR(1) series along axis 0."""
    eps = rng.standard_normal(shape)
    out = np.empty(shape)
    out[0] = eps[0]
    s = math.sqrt(1.0 - phi * phi)
    for t in range(1, shape[0]):
        out[t] = phi * out[t - 1] + s * eps[t]
    return out


def generate_synthetic(spec: SyntheticSpec, return_truth: bool = False):
    """Draw a synthetic dataset of forecast cases.

    With ``return_truth`` the true predictive law of every case is returned
    as well, as a :class:`~windemos.dists.RegimeSwitching` forecast aligned
    with the dataset rows.
    """
    rng = np.random.default_rng(spec.seed)
    n_s, n_d, k = spec.n_stations, spec.n_days, spec.k
    start = np.datetime64(spec.start_date, "D")
    dates = start + np.arange(n_d)
    doy = (dates - dates.astype("datetime64[Y]")).astype(int)
    season = spec.seasonal_amplitude * np.cos(2.0 * math.pi * (doy - 15) / 365.25)

    station_level = rng.uniform(spec.level_low, spec.level_high, n_s)
    common = _ar1(rng, (n_d,), spec.persistence)
    local = _ar1(rng, (n_d, n_s), spec.persistence)
    # multiplicative weather anomaly keeps the level positive and right-skewed
    anomaly = spec.anomaly_sd * (0.6 * common[:, None] + 0.8 * local)
    log_level = season[:, None] + anomaly - 0.5 * spec.anomaly_sd**2
    level = (station_level[None, :] * np.exp(log_level)).ravel()  # (day, station) order

    laws = _truth_laws(spec, level)
    n = level.size
    obs = np.maximum(_draw(laws, rng, (n,)), 0.0)

    sid = np.array([f"S{s + 1:03d}" for s in range(n_s)], dtype=object)
    cols = {"sid": [], "date": [], "lead": [], "obs": [], "mem": []}
    truth_parts = []
    for lead in spec.leads:
        draws = _draw(laws, rng, (n, k))
        centre_err = spec.lead_error * (lead - 1) * rng.standard_normal(n)
        members = level[:, None] + spec.bias + centre_err[:, None] + spec.dispersion_factor * (draws - level[:, None])
        cols["sid"].append(np.tile(sid, n_d))
        cols["date"].append(np.repeat(dates, n_s))
        cols["lead"].append(np.full(n, lead))
        cols["obs"].append(obs)
        cols["mem"].append(np.maximum(members, 0.0))
        truth_parts.append(laws)

    data = Dataset(
        np.concatenate(cols["sid"]),
        np.concatenate(cols["date"]),
        np.concatenate(cols["lead"]),
        np.concatenate(cols["obs"]),
        np.concatenate(cols["mem"]),
    )
    if not return_truth:
        return data
    if len(truth_parts) == 1:
        return data, truth_parts[0]
    mask = np.concatenate([t.use_gev for t in truth_parts])
    tn = TruncatedNormal(
        np.concatenate([t.tn.mu for t in truth_parts]), np.concatenate([t.tn.sigma for t in truth_parts])
    )
    gev = GevDist(
        np.concatenate([t.gev.mu for t in truth_parts]),
        np.concatenate([t.gev.sigma for t in truth_parts]),
        np.concatenate([t.gev.xi for t in truth_parts]),
    )
    return data, RegimeSwitching(mask, tn, gev)


def _draw(laws: RegimeSwitching, rng, shape):
    """Independent draws from each case's law; ``shape[0]`` indexes cases."""
    u = rng.uniform(size=shape)
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    out = np.empty(shape)
    mask = laws.use_gev
    extra = (slice(None),) + (None,) * (len(shape) - 1)
    if (~mask).any():
        tn = laws.tn
        out[~mask] = TruncatedNormal(tn.mu[extra], tn.sigma[extra]).quantile(u[~mask])
    if mask.any():
        g = laws.gev
        out[mask] = GevDist(g.mu[extra], g.sigma[extra], g.xi[extra]).quantile(u[mask])
    return out
