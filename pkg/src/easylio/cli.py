"""Command-line entry point.

Exit codes: 0 on success, 1 on invalid input (any ``ValueError``), 2 on other failures.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from collections.abc import Sequence
from typing import NoReturn

import pandas as pd

from easylio import __version__
from easylio.config import CONTROLLERS, Config, load_config
from easylio.evaluation import RTE_DELTA, EvaluationError, ate, rte
from easylio.harness import ablate_components, ablate_controllers, ablate_search, run_pipeline
from easylio.io import load_log, read_trajectory, write_log
from easylio.synth import SCENARIOS, ImuModel, LidarModel, generate_log

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURE = 2


class ArgumentParser(argparse.ArgumentParser):
    """Argument parser that reports usage errors with the invalid-input exit code."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _config(path: str | None) -> Config:
    return load_config(path) if path else Config()


def _emit(table: pd.DataFrame, out: str | None) -> None:
    print(table.to_string(index=False))
    if out:
        # Create the directory if it doesn't exist
        os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
        table.to_csv(out, index=False, float_format="%.9g", lineterminator="\n")


def cmd_run(args: argparse.Namespace) -> int:
    """Run the pipeline on a log directory and write the report."""
    report = run_pipeline(load_log(args.log_dir), _config(args.config), estimate=not args.no_estimate)
    report.write(args.out)
    if args.dump_map and report.voxel_map is not None:
        report.voxel_map.dump(os.path.join(args.out, "map.csv"))
    for key, value in report.summary.items():
        print(f"{key} = {value}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    """Generate a synthetic log directory."""
    noisy = args.noise == "realistic"
    generated = generate_log(
        args.scenario,
        args.seed,
        duration=args.duration,
        lidar=LidarModel.realistic() if noisy else LidarModel(),
        imu=ImuModel.realistic() if noisy else ImuModel(),
    )
    write_log(generated.log, args.out, generated.metadata)
    print(f"Wrote {len(generated.log.scans)} scans and {len(generated.log.imu)} IMU samples to {args.out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    """Print ATE and RTE of an estimated trajectory against a reference."""
    est, gt = read_trajectory(args.est), read_trajectory(args.gt)
    print(f"ate = {ate(est, gt):.6f}")
    try:
        print(f"rte = {rte(est, gt, args.rte_delta):.6f}")
    except EvaluationError as exc:
        logger.warning("RTE unavailable: %s", exc)
        print(f"rte = {math.nan}")
    return EXIT_OK


def cmd_ablate_controllers(args: argparse.Namespace) -> int:
    """Compare voxel-size controllers on a log."""
    strategies = args.strategies.split(",") if args.strategies else None
    result = ablate_controllers(
        load_log(args.log_dir), _config(args.config), strategies, estimate=not args.no_estimate
    )
    _emit(result.table, args.out)
    return EXIT_OK


def cmd_ablate_search(args: argparse.Namespace) -> int:
    """Compare correspondence searchers on a log."""
    _emit(ablate_search(load_log(args.log_dir), _config(args.config)).table, args.out)
    return EXIT_OK


def cmd_ablate_components(args: argparse.Namespace) -> int:
    """Compare the system with its components switched off."""
    _emit(ablate_components(load_log(args.log_dir), _config(args.config)).table, args.out)
    return EXIT_OK


def build_parser() -> ArgumentParser:
    """Build the argument parser with all subcommands."""
    parser = ArgumentParser(prog="easylio", description="LiDAR-inertial odometry with adaptive voxelization")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the odometry pipeline on a log directory")
    run.add_argument("log_dir")
    run.add_argument("--config", help="TOML configuration file")
    run.add_argument("--out", required=True, help="report directory")
    run.add_argument("--no-estimate", action="store_true", help="controller and dead reckoning only")
    run.add_argument("--dump-map", action="store_true", help="also write the final map as map.csv")
    run.set_defaults(func=cmd_run)

    synth = sub.add_parser("synth", help="generate a synthetic log")
    synth.add_argument("scenario", help="one of: " + ", ".join(SCENARIOS))
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="log directory")
    synth.add_argument("--duration", type=float, help="log length in seconds")
    synth.add_argument("--noise", choices=("none", "realistic"), default="none")
    synth.set_defaults(func=cmd_synth)

    evaluate = sub.add_parser("eval", help="ATE and RTE of a trajectory")
    evaluate.add_argument("est")
    evaluate.add_argument("gt")
    evaluate.add_argument("--rte-delta", type=float, default=RTE_DELTA, help="RTE segment length in meters")
    evaluate.set_defaults(func=cmd_eval)

    controllers = sub.add_parser("ablate-controllers", help="compare voxel-size controllers")
    controllers.add_argument("log_dir")
    controllers.add_argument("--config")
    controllers.add_argument("--strategies", help="comma-separated subset of: " + ", ".join(CONTROLLERS))
    controllers.add_argument("--no-estimate", action="store_true")
    controllers.add_argument("--out", help="CSV file for the table")
    controllers.set_defaults(func=cmd_ablate_controllers)

    for name, func, help_text in (
        ("ablate-search", cmd_ablate_search, "compare correspondence searchers"),
        ("ablate-components", cmd_ablate_components, "compare system variants"),
    ):
        ablation = sub.add_parser(name, help=help_text)
        ablation.add_argument("log_dir")
        ablation.add_argument("--config")
        ablation.add_argument("--out", help="CSV file for the table")
        ablation.set_defaults(func=func)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, run the subcommand and return its exit code."""
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args))
    except ValueError as exc:
        logger.error("%s", exc)
        return EXIT_INVALID
    except Exception as exc:
        logger.exception("Failed: %s", exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
