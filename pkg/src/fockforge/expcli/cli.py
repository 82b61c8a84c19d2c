"""``fockforge`` command line: run, validate, list-kinds.

Exit codes: 0 success, 2 config error, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..tomography import ConvergenceError
from .config import KINDS, ConfigError, load_config
from .experiments import run_experiment
from .report import emit_report

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_DESCRIPTIONS = {
    "delay_scan": "coincidences vs pump-pulse delay, Lorentzian width",
    "power_scan": "pair rates vs one pump power (dual) and single-pump reference",
    "hom": "Hong-Ou-Mandel dip and fitted visibility",
    "tomo2": "two-photon state tomography (9 settings)",
    "tomo4": "four-photon state tomography (25 settings)",
    "tomo_fock": "tomography of a four-photon Fock state",
    "fringe1": "single-photon (CW) phase fringe",
    "fringe2": "two-photon phase fringe",
    "fringe4": "four-photon |13> phase fringe",
    "brightness": "pair and four-photon rate estimates",
    "budget": "loss budget arithmetic",
}


def _report_config_error(exc: ConfigError) -> int:
    print("config error:", file=sys.stderr)
    for field, msg in exc.errors:
        print(f"  {field}: {msg}", file=sys.stderr)
    return EXIT_CONFIG


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _report_config_error(exc)
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = Path(args.out) if args.out else Path(cfg.get("output", f"out/{cfg['kind']}"))
    try:
        report = run_experiment(cfg, out)
    except ConvergenceError as exc:
        print(f"numerical non-convergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    emit_report(report, out / "report.json", "json")
    emit_report(report, out / "report.txt", "text")
    for key, value in report.results.items():
        print(f"{key}: {value}")
    print(f"wrote {out / 'report.json'}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _report_config_error(exc)
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"ok: {cfg['kind']}")
    return EXIT_OK


def cmd_list_kinds(args) -> int:
    for kind in KINDS:
        print(f"{kind:<11} {_DESCRIPTIONS[kind]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fockforge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.set_defaults(func=cmd_run)
    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    val.set_defaults(func=cmd_validate)
    lk = sub.add_parser("list-kinds", help="list experiment kinds")
    lk.set_defaults(func=cmd_list_kinds)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
