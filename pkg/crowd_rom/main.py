"""
Command-line surface of crowd-rom.

    python -m crowd_rom <command> --config configs/desk.json [--stage-dir DIR]
                        [--workers N] [--force]

Exit codes: 0 success, 1 partial or total failure, 2 configuration error.
"""

import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from . import settings
from .config import load_config
from .exceptions import ConfigError, CrowdRomError
from .notifications import StageNotifier
from .pipeline import (
    EXPORT_TARGETS,
    PipelineContext,
    StageResult,
    cmd_build_manifold,
    cmd_export,
    cmd_forecast_evaluate,
    cmd_simulate,
    cmd_train_rom,
    run_all,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_CONFIG_ERROR = 2

STAGE_COMMANDS = {
    "simulate": cmd_simulate,
    "build-manifold": cmd_build_manifold,
    "train-rom": cmd_train_rom,
    "forecast-evaluate": cmd_forecast_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="configs/desk.json", help="Pipeline JSON config")
    common.add_argument("--stage-dir", help="Root of stage outputs (overrides CROWD_ROM_STAGE_DIR)")
    common.add_argument("--workers", type=int, help="Parallel worker cap (overrides CROWD_ROM_WORKERS)")
    common.add_argument("--force", action="store_true", help="Recompute up-to-date stages")

    parser = argparse.ArgumentParser(
        prog="crowd-rom",
        description="Reduced-order models of crowd flow past an obstacle",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_COMMANDS:
        commands.add_parser(name, parents=[common], help=f"Run the {name} stage")
    commands.add_parser("all", parents=[common], help="Run every stage in order")

    export = commands.add_parser("export", parents=[common], help="Write plot data")
    export.add_argument("what", choices=EXPORT_TARGETS)
    export.add_argument("--run-id", type=int)
    export.add_argument("--time", type=float, help="Snapshot time in seconds")
    export.add_argument("--kind", help="Encoder kind for latent exports (pod or dmaps)")
    export.add_argument("--model", help="Model name for error exports, e.g. dmaps_d10")
    export.add_argument("--split", help="Split for error exports (default test)")
    return parser


def _exit_code(results: List[StageResult]) -> int:
    failed = [r for r in results if not r.ok]
    for result in failed:
        logger.error(f"{result.stage.value}: {len(result.failures)} failure(s)")
    return EXIT_FAILURES if failed else EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=settings.LOG_LEVEL, format=settings.LOG_FORMAT)

    try:
        config = load_config(args.config)
    except (ConfigError, ValidationError) as e:
        logger.error(f"Invalid configuration {args.config}: {e}")
        return EXIT_CONFIG_ERROR

    ctx = PipelineContext(config, args.stage_dir, args.workers, args.force, StageNotifier())
    try:
        if args.command == "all":
            results = run_all(ctx)
        elif args.command == "export":
            results = [
                cmd_export(
                    ctx, args.what, run_id=args.run_id, t=args.time,
                    kind=args.kind, model=args.model, split=args.split,
                )
            ]
        else:
            results = [STAGE_COMMANDS[args.command](ctx)]
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG_ERROR
    except (CrowdRomError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_FAILURES
    return _exit_code(results)


if __name__ == "__main__":
    sys.exit(main())
