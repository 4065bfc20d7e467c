"""Command-line entry point: ``weighted-rml run|report|oracle``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import PROBLEMS, ConfigError, load_config, preset_names, with_overrides
from .experiments import build_problem, run_experiment
from .reports import emit_oracle, emit_reports, load_ensemble

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

logger = logging.getLogger("weighted_rml")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weighted-rml", description="Weighted RML sampling experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config (YAML file or preset name)")
    run.add_argument("config", help=f"path to a YAML config, or one of: {', '.join(preset_names())}")
    run.add_argument("--out", required=True, type=Path, help="output directory")
    run.add_argument("--threads", type=int, default=1, help="worker threads over draws")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--n-samples", type=int, default=None, help="override the number of draws")

    rep = sub.add_parser("report", help="regenerate tables from a saved ensemble.bin")
    rep.add_argument("ensemble", type=Path)
    rep.add_argument("--out", type=Path, default=None, help="output directory (default: alongside the ensemble)")

    ora = sub.add_parser("oracle", help="write reference density tables")
    ora.add_argument("problem", choices=PROBLEMS)
    ora.add_argument("--out", type=Path, default=Path("."))
    return p


def _run(args) -> int:
    config = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.n_samples is not None:
        changes["n_samples"] = args.n_samples
    if changes:
        config = with_overrides(config, **changes)
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    problem = build_problem(config)
    ensemble = run_experiment(config, problem, threads=args.threads)
    emit_reports(ensemble, config, args.out, problem)
    summary = json.loads((args.out / "summary.json").read_text())
    print(json.dumps({k: summary[k] for k in ("problem", "algorithm", "n_points", "n_failed", "efficiency", "mean_sq_misfit")}))
    return EXIT_OK


def _report(args) -> int:
    if not args.ensemble.exists():
        raise ConfigError(f"no such ensemble file: {args.ensemble}")
    ensemble, config = load_ensemble(args.ensemble)
    out = args.out or args.ensemble.parent
    for path in emit_reports(ensemble, config, out):
        print(path)
    return EXIT_OK


def _oracle(args) -> int:
    for path in emit_oracle(args.problem, args.out):
        print(path)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _run, "report": _report, "oracle": _oracle}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
