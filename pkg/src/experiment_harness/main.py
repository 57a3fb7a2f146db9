"""
Command-line driver for the nonlocal compliance optimization experiments.

Usage:
    python -m src.experiment_harness.main optimize --config run.cfg --set delta=0.2

Every subcommand reads a flat key=value configuration file (optional), applies the
``--set`` overrides and writes CSV tables, legacy VTK files and ``run.log`` into the
output directory. On failure one line ``error-class=<class> message=<text>`` goes to
stderr and the exit code is nonzero (2 for configuration errors).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import get_args

from pydantic import ValidationError

from src.experiment_harness.constants import RUN_LOG_NAME
from src.experiment_harness.experiment_types import ExperimentKind, is_experiment_kind
from src.experiment_harness.orchestrator import ExperimentOrchestrator, configure_run
from src.nonlocal_topopt.exceptions import InvalidArgumentError, NonlocalTopoptError

logger = logging.getLogger(__name__)

EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per experiment."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="key=value configuration file")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one configuration key (repeatable)",
    )
    common.add_argument("--output-dir", type=Path, default=None, help="artifact directory")

    parser = argparse.ArgumentParser(
        prog="nonlocal-topopt", description="Nonlocal compliance optimization experiments"
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="console and run.log verbosity",
    )
    subparsers = parser.add_subparsers(dest="experiment", required=True)
    for kind in get_args(ExperimentKind):
        subparsers.add_parser(kind, parents=[common])
    return parser


def report_failure(error_class: str, message: str) -> None:
    """Print the machine-parsable failure line."""
    one_line = " ".join(message.split())
    print(f"error-class={error_class} message={one_line}", file=sys.stderr)  # noqa: T201


def attach_run_log(output_dir: Path, level: str) -> logging.Handler:
    """Mirror the log into ``<output_dir>/run.log``."""
    output_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(output_dir / RUN_LOG_NAME, encoding="utf-8")
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger().addHandler(handler)
    return handler


def main(argv: list[str] | None = None) -> int:
    """Run one experiment and return the process exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level)

    experiment: str = args.experiment
    if not is_experiment_kind(experiment):
        report_failure("config-error", f"unknown experiment {experiment!r}")
        return EXIT_CONFIG_ERROR

    try:
        config = configure_run(
            args.config, args.overrides, experiment=experiment, output_dir=args.output_dir
        )
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first.get("loc", ())) or "config"
        report_failure("config-error", f"{location}: {first.get('msg', e)}")
        return EXIT_CONFIG_ERROR
    except (InvalidArgumentError, OSError) as e:
        report_failure("config-error", str(e))
        return EXIT_CONFIG_ERROR

    handler = attach_run_log(config.output_dir, args.log_level)
    try:
        ExperimentOrchestrator(config).run_experiment()
    except NonlocalTopoptError as e:
        report_failure(e.error_class, str(e))
        return EXIT_FAILURE
    except OSError as e:
        logger.error(f"I/O failure: {e}")
        report_failure("io-error", str(e))
        return EXIT_FAILURE
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
