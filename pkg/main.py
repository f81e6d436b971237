"""
EV Charging Station Thermal Monitor - command-line entry point
Simulate a station day, train the temperature ensemble, detect anomalous modules
"""

import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional

from loguru import logger

from commands import AnomalyInjection, cmd_detect, cmd_simulate, cmd_train
from config import RunConfig, load_run_config, settings
from utils import PipelineError, UsageError, setup_logging


EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_ANOMALY = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evthermal",
        description=settings.app_name,
    )
    parser.add_argument("--log-level", default=None, help="Override the configured log level")
    parser.add_argument("--log-file", default=None, help="Also log to this file")
    parser.add_argument("--no-progress", action="store_true", help="Disable progress bars")
    subparsers = parser.add_subparsers(dest="command", required=True)

    simulate = subparsers.add_parser("simulate", help="Simulate one day of station operation")
    simulate.add_argument("--config", help="YAML run config (defaults when omitted)")
    simulate.add_argument("--seed", type=int, default=None, help="Seed (config rng_seed when omitted)")
    simulate.add_argument("--params", help="Re-use thermal parameters from this file")
    simulate.add_argument(
        "--anomaly",
        nargs=2,
        metavar=("module=<id>", "r_hs_scale=<f>"),
        help="Scale one module's heat-sink resistance",
    )
    simulate.add_argument("--out", help="Output run directory (<run_root>/simulate when omitted)")

    train = subparsers.add_parser("train", help="Train the temperature ensemble")
    train.add_argument("--config", help="YAML run config (defaults when omitted)")
    train.add_argument("--data", required=True, help="Dataset CSV")
    train.add_argument("--seed", type=int, default=0, help="Base seed of the members")
    train.add_argument("--out", help="Model file to write (<run_root>/model.json when omitted)")
    train.add_argument("--n-jobs", type=int, default=None, help="Members trained in parallel")

    detect = subparsers.add_parser("detect", help="Score a day and classify every module")
    detect.add_argument("--config", help="YAML run config (defaults when omitted)")
    detect.add_argument("--model", required=True, help="Model file")
    detect.add_argument("--data", required=True, help="Dataset CSV")
    detect.add_argument("--out", help="Output run directory (<run_root>/detect when omitted)")
    detect.add_argument("--threshold", type=float, default=None)
    detect.add_argument("--fraction", type=float, default=None)
    detect.add_argument("--ema-alpha", type=float, default=None)
    detect.add_argument("--sma-window", type=int, default=None)
    detect.add_argument(
        "--data-threshold",
        action="store_true",
        help="Decide with the training-day EMA percentile instead of the fixed threshold",
    )
    return parser


def _detection_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    overrides = {
        "threshold": args.threshold,
        "fraction_rule": args.fraction,
        "ema_alpha": args.ema_alpha,
        "sma_window": args.sma_window,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if not overrides:
        return config
    try:
        detection = config.detection.model_validate(
            {**config.detection.model_dump(), **overrides}
        )
    except ValueError as e:
        raise UsageError(f"Invalid detection option: {e}")
    return config.model_copy(update={"detection": detection})


def _default_out(command: str) -> Path:
    name = "model.json" if command == "train" else command
    return Path(settings.run_root) / name


def run(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    out = Path(args.out) if args.out else _default_out(args.command)
    show_progress = settings.show_progress and not args.no_progress

    if args.command == "simulate":
        anomaly = AnomalyInjection.parse(args.anomaly) if args.anomaly else None
        cmd_simulate(config, out, seed=args.seed, params_path=args.params, anomaly=anomaly)
        return EXIT_OK

    if args.command == "train":
        n_jobs = args.n_jobs or settings.n_jobs
        if n_jobs < 1:
            raise UsageError(f"--n-jobs must be at least 1, got {n_jobs}")
        ensemble = cmd_train(
            config, args.data, out, seed=args.seed, n_jobs=n_jobs, show_progress=show_progress
        )
        for seed, rmse in zip(ensemble.member_seeds, ensemble.member_val_rmse):
            print(f"member seed={seed} best_val_rmse={rmse:.4f} C")
        return EXIT_OK

    result = cmd_detect(
        _detection_overrides(config, args),
        args.model,
        args.data,
        out,
        use_data_threshold=args.data_threshold,
    )
    for report in result.reports:
        print(
            f"module {report.module_id}: {report.verdict} "
            f"fraction_above={report.fraction_above_threshold:.4f}"
        )
    return EXIT_ANOMALY if result.anomalous_modules else EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.log_level or settings.log_level, args.log_file or settings.log_file)
    logger.debug(f"Environment: {os.getenv('ENVIRONMENT', 'development')}")

    try:
        return run(args)
    except PipelineError as e:
        logger.error(f"{type(e).__name__}: {e.detail}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error: {str(e)}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
