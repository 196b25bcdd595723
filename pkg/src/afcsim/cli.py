"""Command-line front end.

    afcsim SCENARIO [--config FILE] [--seed N] [--out DIR]
                    [--format csv|json] [--threads N] [--no-figures]
    afcsim reproduce TARGET [...]

Environment overrides: AFCSIM_CONFIG, AFCSIM_SEED, AFCSIM_OUT,
AFCSIM_FORMAT, AFCSIM_THREADS.  Exit codes: 0 success, 2 configuration or
input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import SchemaError, load_config
from .scenarios import SCENARIOS, NumericalError, ScenarioError, run_scenario

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_NUMERICAL = 3

REPRODUCE_TARGETS = sorted(name.split(":", 1)[1] for name in SCENARIOS
                           if name.startswith("reproduce:"))
BASIC_SCENARIOS = sorted(name for name in SCENARIOS if ":" not in name)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="afcsim",
        description="Simulation and analytics scenarios for an integrated "
                    "frequency-comb photon memory.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None, help="YAML configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--format", choices=("csv", "json"), default=None,
                       help="tabular output format")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads for parameter scans")
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")

    for name in BASIC_SCENARIOS:
        add_common(sub.add_parser(name, help=f"run the {name} scenario"))

    repro = sub.add_parser("reproduce", help="rebuild a published result")
    repro.add_argument("target", choices=REPRODUCE_TARGETS)
    add_common(repro)
    return parser


def _env(name, cast=str):
    value = os.environ.get(name)
    if value is None:
        return None
    return cast(value)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    scenario = args.command if args.command != "reproduce" else f"reproduce:{args.target}"

    config_path = args.config or _env("AFCSIM_CONFIG")
    overrides = {
        "seed": args.seed if args.seed is not None else _env("AFCSIM_SEED", int),
        "out_dir": args.out or _env("AFCSIM_OUT"),
        "format": args.format or _env("AFCSIM_FORMAT"),
        "threads": args.threads if args.threads is not None else _env("AFCSIM_THREADS", int),
    }
    if args.no_figures:
        overrides["render_figures"] = False

    try:
        cfg = load_config(config_path, overrides)
    except (SchemaError, FileNotFoundError, OSError) as exc:
        print(f"afcsim: configuration error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA

    try:
        report = run_scenario(scenario, cfg)
    except (ScenarioError, SchemaError) as exc:
        print(f"afcsim: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (NumericalError, FloatingPointError) as exc:
        print(f"afcsim: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    print(f"{report.scenario}: wrote {len(report.outputs)} files to "
          f"{cfg['out_dir']} in {report.wall_time_s:.2f} s "
          f"(config {report.config_hash}, seed {report.seed})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
