"""Command-line entry point: ``nonlocal-fk <subcommand> --config <path> --out <dir>``.

Exit codes: 0 pass, 1 bound or assumption violation, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .errors import (
    AssumptionViolated,
    ConfigurationError,
    ConvergenceFailure,
    DomainError,
    EstimatorOverflow,
    InvalidRateFunction,
    PositivityWarning,
    StepSizeError,
    UnresolvableKernelError,
)
from .experiments import EXPERIMENTS, Setup
from .io import read_table, write_field_series, write_json, write_table

EXIT_PASS, EXIT_VIOLATION, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
REPORT = "report.json"

log = logging.getLogger("nonlocal_fk")


def make_run_dir(out: Path, subcommand: str, now: _dt.datetime | None = None) -> tuple[Path, str]:
    """Fresh ``<out>/<subcommand>-<UTC timestamp>[-k]``; existing directories are never reused."""
    now = now or _dt.datetime.now(_dt.timezone.utc)
    stamp = now.strftime("%Y%m%dT%H%M%S.%fZ")
    out.mkdir(parents=True, exist_ok=True)
    base = out / f"{subcommand}-{stamp}"
    path, k = base, 0
    while True:
        try:
            path.mkdir()
            return path, now.isoformat()
        except FileExistsError:
            k += 1
            path = Path(f"{base}-{k}")


def _base_report(subcommand: str, cfg: ExperimentConfig | None, timestamp: str) -> dict:
    report = {"subcommand": subcommand, "timestamp": timestamp, "version": __version__}
    if cfg is not None:
        report["config_hash"] = cfg.hash
        report["config"] = cfg.raw
    return report


def run_experiment(subcommand: str, config_path, out, seed=None, paths=None) -> tuple[int, Path | None]:
    """Validate, run and persist one experiment; returns the exit code and run directory."""
    out = Path(out)
    try:
        cfg = ExperimentConfig.load(config_path, seed=seed, paths=paths) if config_path else ExperimentConfig.from_dict(
            {}, seed=seed, paths=paths
        )
    except ConfigurationError as exc:
        for p in exc.problems or [str(exc)]:
            log.error("config: %s", p)
        return EXIT_CONFIG, None

    run_dir, timestamp = make_run_dir(out, subcommand)
    report = _base_report(subcommand, cfg, timestamp)
    code = EXIT_PASS
    try:
        setup = Setup.build(cfg)
        report["derived"] = setup.derived()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", PositivityWarning)
            outcome = EXPERIMENTS[subcommand](cfg)
        report["warnings"] = [str(w.message) for w in caught]
        report["assumption_checks"] = outcome.assumptions
        report["results"] = outcome.results
        report["status"] = "pass" if outcome.passed else "violation"
        code = EXIT_PASS if outcome.passed else EXIT_VIOLATION
        for name, (header, columns) in outcome.tables.items():
            write_table(run_dir / name, header, columns)
        for name, series in outcome.series.items():
            write_field_series(series, run_dir / name, {"params": setup.derived(), "config_hash": cfg.hash})
    except AssumptionViolated as exc:
        report["status"] = "assumption_violated"
        report["violated_assumption"] = exc.assumption
        report["error"] = str(exc)
        code = EXIT_VIOLATION
    except (ConfigurationError, UnresolvableKernelError) as exc:
        report["status"] = "configuration_error"
        report["error"] = str(exc)
        report["problems"] = getattr(exc, "problems", [])
        code = EXIT_CONFIG
    except (StepSizeError, EstimatorOverflow, ConvergenceFailure, InvalidRateFunction, DomainError, FloatingPointError) as exc:
        report["status"] = "numerical_failure"
        report["error"] = f"{type(exc).__name__}: {exc}"
        for attr in ("stats", "history"):
            if getattr(exc, attr, None):
                report[attr] = getattr(exc, attr)
        code = EXIT_NUMERICAL
    write_json(report, run_dir / REPORT)
    log.info("%s: %s -> %s", subcommand, report["status"], run_dir)
    return code, run_dir


def _log_column(values) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(values, dtype=float))


_PLOT_BUNDLES = {
    "stability_series.csv": (
        "stability_plot.csv",
        ["t", "log_norm", "envelope_low", "envelope_high"],
        lambda c: [c["t"], c["log_deviation"], c["envelope_low"], c["envelope_high"]],
    ),
    "taylor_series.csv": (
        "taylor_plot.csv",
        ["t", "observed", "bound"],
        lambda c: [c["t"], c["observed"], c["bound"]],
    ),
    "second_moment.csv": (
        "random_field_plot.csv",
        ["t", "spectral_value", "mc_estimate", "mc_ci"],
        lambda c: [c["t"], c["spectral_value"], c["mc_estimate"], c["mc_ci"]],
    ),
    "exponent_fit.csv": (
        "exponent_plot.csv",
        ["log_t", "log_scaled"],
        lambda c: [_log_column(c["t"]), _log_column(c["scaled"])],
    ),
    "norms.csv": (
        "norms_plot.csv",
        ["t", "log_deviation"],
        lambda c: [c["t"], _log_column(c["deviation"])],
    ),
}


def emit_plotdata(run_dir) -> list[Path]:
    """Flat CSV bundles for external plotting from the tables in ``run_dir``."""
    run_dir = Path(run_dir)
    if not (run_dir / REPORT).exists():
        warnings.warn(f"{run_dir} has no {REPORT}; nothing to do", stacklevel=2)
        return []
    written = []
    for source, (target, header, pick) in _PLOT_BUNDLES.items():
        if not (run_dir / source).exists():
            continue
        cols = read_table(run_dir / source)
        written.append(write_table(run_dir / target, header, pick(cols)))
    if not written:
        warnings.warn(f"{run_dir}: no tables to convert", stacklevel=2)
    return written


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nonlocal-fk", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=EXPERIMENTS[name].__doc__.split("\n")[0])
        p.add_argument("--config", type=Path, help="experiment JSON (defaults used when omitted)")
        p.add_argument("--out", type=Path, default=Path("runs"), help="parent of the run directory")
        p.add_argument("--seed", type=int, help="override monte_carlo.master_seed")
        p.add_argument("--paths", type=int, help="override the Monte Carlo sample count")
        p.add_argument("--quiet", action="store_true")
    p = sub.add_parser("plotdata", help="write plot-ready CSVs into a run directory")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    if args.command == "plotdata":
        files = emit_plotdata(args.run_dir)
        for f in files:
            log.info("wrote %s", f)
        return EXIT_PASS
    code, run_dir = run_experiment(args.command, args.config, args.out, args.seed, args.paths)
    if run_dir is not None and not args.quiet:
        print(run_dir)
    return code


if __name__ == "__main__":
    sys.exit(main())
