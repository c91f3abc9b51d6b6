"""Command-line interface: ``windemos <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. Errors are also printed to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import configparser
import datetime as dt
import hashlib
import json
import logging
import math
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .data import CaseFormatError, SyntheticSpec, generate_synthetic, read_cases, write_cases
from .dists import EmpiricalEnsemble, GevDist, TruncatedNormal
from .estimation import ConvergenceError, InsufficientDataError
from .models import (
    CaseRecords,
    ConfigError,
    ExperimentConfig,
    calibration_histograms,
    run_rolling_experiment,
    score_table,
    select_theta,
    station_table,
    twcrpss_curve,
)
from .scoring import (
    InfiniteMeanError,
    QuadratureError,
    Weight,
    crps,
    crps_quadrature,
    log_score,
    pit,
    twcrps,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("windemos")


class DataError(Exception):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """What a command consumed and produced; timestamps are the only volatile fields."""

    command: str
    config: dict
    seed: int
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    version: str = __version__
    started: str = field(default_factory=_now)
    finished: str = ""

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# argument parsing

def _floats(text: str) -> tuple[float, ...]:
    """Comma list ``10,12,15`` or range ``start:stop:step`` (stop inclusive)."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0:
                raise ValueError
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            return tuple(round(start + i * step, 10) for i in range(max(n, 0)))
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma list or start:stop:step, got {text!r}") from None


def _gauss(text: str) -> tuple[float, float]:
    try:
        mu, sigma = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected mu:sigma, got {text!r}") from None
    return mu, sigma


_FLAG_FIELDS = {
    "window_days": "window_days",
    "theta": "theta",
    "theta_grid": "theta_grid",
    "lead": "lead_days",
    "twcrps_thresholds": "twcrps_thresholds",
    "seed": "seed",
    "warm_start": "warm_start",
    "jobs": "jobs",
    "min_train": "min_train",
    "verification_days": "verification_days",
    "gaussian_weights": "gaussian_weights",
}


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("experiment settings (defaults: ExperimentConfig)")
    g.add_argument("--config", type=Path, help="INI file with an [experiment] section")
    g.add_argument("--window-days", type=int, help="rolling training window m in days (30)")
    g.add_argument("--theta", type=float, help="regime threshold on the ensemble median, m/s (7.5)")
    g.add_argument("--theta-grid", type=_floats, help="thresholds tried by select-theta, e.g. 5:10:0.5")
    g.add_argument("--lead", type=int, help="lead time in days (1)")
    g.add_argument("--twcrps-thresholds", type=_floats, help="indicator-weight thresholds r (10,12,15)")
    g.add_argument("--seed", type=int, help="random seed (0)")
    g.add_argument("--warm-start", action="store_true", default=None, help="start each search from the previous day's fit")
    g.add_argument("--jobs", type=int, help="worker processes (1)")
    g.add_argument("--min-train", type=int, help="minimum pooled pairs per fit (100)")
    g.add_argument("--verification-days", type=int, help="score only the last N eligible days")
    g.add_argument(
        "--gaussian-weights", type=_gauss, action="append", metavar="MU:SIGMA",
        help="also report twCRPS with a Gaussian-CDF weight (repeatable)",
    )


def _config_from_ini(path: Path) -> dict:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(path.read_text(encoding="utf-8"))
    except (OSError, configparser.Error) as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from None
    if not cp.has_section("experiment"):
        return {}
    known = {f: f for f in ExperimentConfig.__dataclass_fields__}
    out, errors = {}, []
    for key, raw in cp["experiment"].items():
        if key not in known:
            errors.append(f"unknown experiment setting {key!r}")
            continue
        try:
            if key in ("twcrps_thresholds", "theta_grid", "curve_thresholds"):
                out[key] = _floats(raw)
            elif key == "gaussian_weights":
                out[key] = tuple(_gauss(v) for v in raw.split(",") if v.strip())
            elif key == "warm_start":
                out[key] = cp["experiment"].getboolean(key)
            elif key == "verification_days":
                out[key] = None if raw.strip().lower() in ("", "none") else int(raw)
            elif key in ("theta",):
                out[key] = float(raw)
            else:
                out[key] = int(raw)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            errors.append(f"{key}: {exc}")
    if errors:
        raise ConfigError(errors)
    return out


def _experiment_config(args) -> ExperimentConfig:
    kw = _config_from_ini(args.config) if args.config else {}
    for flag, name in _FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            kw[name] = tuple(value) if isinstance(value, list) else value
    return ExperimentConfig(**kw)


# ---------------------------------------------------------------------------
# commands

def _load_cases(path: Path):
    if not path.is_file():
        raise DataError(f"no such case file: {path}")
    return read_cases(path)


class _Staging:
    """Collect outputs in a hidden directory inside ``out_dir`` and promote them on success."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
        self.names: list[str] = []

    def write(self, name: str, text: str) -> None:
        (self.tmp / name).write_text(text, encoding="utf-8", newline="\n")
        self.names.append(name)

    def digests(self) -> dict[str, str]:
        return {n: _sha256(self.tmp / n) for n in self.names}

    def commit(self) -> None:
        for n in self.names:
            os.replace(self.tmp / n, self.out_dir / n)
        shutil.rmtree(self.tmp, ignore_errors=True)

    def abort(self) -> None:
        shutil.rmtree(self.tmp, ignore_errors=True)


def cmd_simulate(args) -> int:
    try:
        text = args.spec.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read spec file: {exc}"]) from None
    try:
        spec = SyntheticSpec.from_config(text)
    except (ValueError, configparser.Error) as exc:
        raise ConfigError(str(exc).split("; ")) from None
    if args.seed is not None:
        spec = SyntheticSpec(**{**spec.__dict__, "seed": args.seed})
    data = generate_synthetic(spec)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    tmp = args.out.with_name(f".{args.out.name}.tmp")
    write_cases(data, tmp)
    os.replace(tmp, args.out)
    print(f"wrote {len(data)} cases ({spec.n_stations} stations, {spec.n_days} days, k={spec.k}) to {args.out}")
    return EXIT_OK


def _curve_csv(x, y, xname: str, yname: str) -> str:
    lines = [f"{xname},{yname}"] + [f"{float(a)!r},{float(b)!r}" for a, b in zip(x, y)]
    return "\n".join(lines) + "\n"


def cmd_select_theta(args) -> int:
    config = _experiment_config(args)
    data = _load_cases(args.cases)
    theta, grid, scores = select_theta(data, config)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    tmp = args.out.with_name(f".{args.out.name}.tmp")
    tmp.write_text(_curve_csv(grid, scores, "theta", "mean_crps"), encoding="utf-8")
    os.replace(tmp, args.out)
    print(f"selected theta = {theta:g} m/s (mean CRPS {scores[list(grid).index(theta)]:.6f})")
    return EXIT_OK


def _coefficients_csv(fits) -> str:
    cols = ["valid_date", "model", "source", "n_train", "objective", "n_evals", "converged", "at_boundary",
            "p1", "p2", "p3", "p4", "p5"]
    lines = [",".join(cols)]
    for f in fits:
        for name, m in f.models().items():
            if m is None:
                continue
            p = [repr(float(v)) for v in m.coefficients.as_array()]
            p += [""] * (5 - len(p))
            lines.append(
                ",".join(
                    [str(f.date), name, m.source, str(m.n_train), repr(float(m.objective)), str(m.n_evals),
                     str(m.converged).lower(), str(m.at_boundary).lower()] + p
                )
            )
    return "\n".join(lines) + "\n"


def derived_outputs(records: CaseRecords, config: ExperimentConfig) -> dict[str, str]:
    """Every summary file of a run, computed from the per-case records only."""
    table = score_table(records, config.twcrps_thresholds)
    out = {"scores.csv": table.to_csv(), "scores.json": table.to_json(), "stations.csv": station_table(records)}
    for name, h in calibration_histograms(records, config.pit_bins).items():
        out[f"{name}.csv"] = h.to_csv()
    for name in ("gev", "combination"):
        r, v = twcrpss_curve(records, name, "tn", config.curve_thresholds)
        out[f"twcrpss_{name}.csv"] = _curve_csv(r, v, "r", "twcrpss")
    return out


def cmd_run(args) -> int:
    config = _experiment_config(args)
    data = _load_cases(args.cases)
    manifest = RunManifest("run", config.to_dict(), config.seed, inputs={str(args.cases): _sha256(args.cases)})
    res = run_rolling_experiment(data, config)
    stage = _Staging(args.out_dir)
    try:
        stage.write("cases.csv", res.records.to_csv())
        for name, text in derived_outputs(res.records, config).items():
            stage.write(name, text)
        stage.write("coefficients.csv", _coefficients_csv(res.fits))
        stage.write("diagnostics.json", json.dumps(res.diagnostics, indent=2, sort_keys=True) + "\n")
        stage.write("config.json", json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
        manifest.outputs = stage.digests()
        manifest.finished = _now()
        stage.write("manifest.json", manifest.to_json())
        stage.commit()
    except BaseException:
        stage.abort()
        raise
    print(res.table.format())
    d = res.diagnostics
    print(f"\n{d['verification_days']} verification days, {d['skipped_days']} skipped, "
          f"GEV branch share {100 * d['gev_branch_share']:.1f}%")
    if d["skipped_fraction"] > 0.05:
        print(f"warning: {100 * d['skipped_fraction']:.1f}% of verification days were skipped", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    out_dir = args.out_dir
    cases = out_dir / "cases.csv"
    cfg_path = out_dir / "config.json"
    if not cases.is_file() or not cfg_path.is_file():
        raise DataError(f"{out_dir} does not hold a completed run (cases.csv, config.json)")
    cfg = json.loads(cfg_path.read_text(encoding="utf-8"))
    cfg["gaussian_weights"] = [tuple(g) for g in cfg.get("gaussian_weights", [])]
    config = ExperimentConfig(**cfg)
    try:
        records = CaseRecords.from_csv(cases.read_text(encoding="utf-8"))
    except (ValueError, IndexError) as exc:
        raise DataError(f"{cases}: {exc}") from None
    outputs = derived_outputs(records, config)
    mismatched = []
    for name, text in outputs.items():
        path = out_dir / name
        if not path.is_file() or path.read_text(encoding="utf-8") != text:
            mismatched.append(name)
    print(score_table(records, config.twcrps_thresholds).format())
    if args.check:
        if mismatched:
            print(f"re-derived outputs differ from stored files: {', '.join(mismatched)}", file=sys.stderr)
            return EXIT_DATA
        print(f"\nall {len(outputs)} summary files re-derive exactly from cases.csv")
    return EXIT_OK


def _build_dist(kind: str, params: list[float]):
    if kind == "tn":
        if len(params) != 2:
            raise ConfigError(["tn needs --params mu,sigma"])
        return TruncatedNormal(*params)
    if kind == "gev":
        if len(params) != 3:
            raise ConfigError(["gev needs --params mu,sigma,xi"])
        return GevDist(*params)
    if kind == "ensemble":
        if not params:
            raise ConfigError(["ensemble needs --params with at least one member"])
        return EmpiricalEnsemble(np.asarray(params))
    raise ConfigError([f"unknown distribution {kind!r}"])


def cmd_score_one(args) -> int:
    try:
        f = _build_dist(args.dist, list(args.params))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError([str(exc)]) from None
    if args.threshold is not None and args.gaussian is not None:
        raise ConfigError(["give at most one of --threshold and --gaussian"])
    w = Weight.constant()
    if args.threshold is not None:
        w = Weight.indicator(args.threshold)
    elif args.gaussian is not None:
        w = Weight.gaussian_cdf(*args.gaussian)
    y = args.y
    if args.metric == "crps":
        value = crps(f, y)
    elif args.metric == "twcrps":
        value = twcrps(f, y, w)
    elif args.metric == "crps-quadrature":
        value = crps_quadrature(f, y, w)
    elif args.metric == "logs":
        value = log_score(f, y)
    else:
        value = pit(f, y, rng=np.random.default_rng(0))
    print(repr(float(value)))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="windemos", description="Postprocess ensemble wind forecasts and verify them.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a synthetic case CSV from a [synthetic] spec file")
    s.add_argument("spec", type=Path)
    s.add_argument("out", type=Path)
    s.add_argument("--seed", type=int, help="override the spec's seed")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("select-theta", help="mean CRPS of the regime model over a grid of thresholds")
    s.add_argument("cases", type=Path)
    s.add_argument("out", type=Path, help="two-column curve CSV (theta, mean_crps)")
    _add_experiment_flags(s)
    s.set_defaults(func=cmd_select_theta)

    s = sub.add_parser("run", help="rolling-window experiment with all five forecasters")
    s.add_argument("cases", type=Path)
    s.add_argument("out_dir", type=Path)
    _add_experiment_flags(s)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="re-derive and print the summaries of a finished run")
    s.add_argument("out_dir", type=Path)
    s.add_argument("--check", action="store_true", help="fail unless stored summaries match the re-derived ones")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("score-one", help="score a single forecast")
    s.add_argument("--dist", required=True, choices=["tn", "gev", "ensemble"])
    s.add_argument("--params", required=True, type=_floats, help="tn: mu,sigma  gev: mu,sigma,xi  ensemble: members")
    s.add_argument("--y", required=True, type=float, help="observation")
    s.add_argument("--metric", default="crps", choices=["crps", "twcrps", "crps-quadrature", "logs", "pit"])
    s.add_argument("--threshold", type=float, help="indicator weight threshold r for twcrps")
    s.add_argument("--gaussian", type=_gauss, metavar="MU:SIGMA", help="Gaussian-CDF weight for twcrps")
    s.set_defaults(func=cmd_score_one)
    return p


def _fail(code: int, kind: str, messages: list[str]) -> int:
    print(json.dumps({"error": kind, "exit_code": code, "messages": messages}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc.errors)
    except (DataError, CaseFormatError, InsufficientDataError, OSError) as exc:
        return _fail(EXIT_DATA, "data", [str(exc)])
    except (QuadratureError, ConvergenceError, InfiniteMeanError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numerical", [str(exc)])
    except ValueError as exc:
        return _fail(EXIT_DATA, "data", [str(exc)])


if __name__ == "__main__":
    sys.exit(main())
