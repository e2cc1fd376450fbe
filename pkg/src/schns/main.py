import argparse
import json
import logging
import logging.handlers
import os
import sys
from pathlib import Path
from typing import Any, Dict, Optional

try:
    from .core import config as config_io
    from .core import models
    from .core.exceptions import SimulationError
    from .handlers import commands
except ImportError:
    sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))
    from schns.core import config as config_io
    from schns.core import models
    from schns.core.exceptions import SimulationError
    from schns.handlers import commands

log = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"


def setup_logging(args: argparse.Namespace, output_directory: Optional[str] = None) -> None:
    """Configures logging based on command-line arguments."""
    root_logger = logging.getLogger()
    if root_logger.hasHandlers():
        root_logger.handlers.clear()

    root_logger.setLevel(getattr(logging, args.log_level.upper()))

    # relative log files wait until the output directory is known
    if args.log_file and (output_directory or Path(args.log_file).is_absolute()):
        try:
            log_file_path = Path(args.log_file)
            if not log_file_path.is_absolute():
                log_file_path = Path(output_directory) / log_file_path
            log_file_path.parent.mkdir(parents=True, exist_ok=True)
            file_handler = logging.handlers.RotatingFileHandler(
                log_file_path,
                maxBytes=10 * 1024 * 1024,  # 10 MB
                backupCount=5,
            )
            file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
            root_logger.addHandler(file_handler)
            log.info(f"File logging configured to: {log_file_path}")
        except OSError as e:
            logging.basicConfig()
            log.error(f"Failed to set up file logging to {args.log_file}: {e}")

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    if args.debug:
        console_handler.setLevel(logging.DEBUG)
    elif args.quiet:
        console_handler.setLevel(logging.ERROR)
    else:
        console_handler.setLevel(logging.WARNING)
    root_logger.addHandler(console_handler)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="Path to a run configuration file (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="Base seed, overrides ensemble.base_seed")
    common.add_argument("--out", type=str, help="Output directory, overrides output.directory")
    common.add_argument("--steps", type=int, help="Number of time steps, overrides output.steps")
    common.add_argument("--quiet", action="store_true", help="Only print errors")
    common.add_argument(
        "--log-level",
        type=str,
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Set the logging level.",
    )
    common.add_argument(
        "--log-file",
        type=str,
        help="Log file path, relative paths are placed in the output directory",
    )
    common.add_argument("--debug", action="store_true", help="Enable verbose debug output")

    parser = argparse.ArgumentParser(prog="schns", description="Stochastic Cahn-Hilliard-Navier-Stokes simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="Run a single path")
    sub.add_parser("ensemble", parents=[common], help="Run N paths and the supermartingale tests")
    verify = sub.add_parser("verify", parents=[common], help="Run the invariant suites")
    verify.add_argument("--suite", action="append", dest="suites", help="Suite to run (repeatable), all by default")
    verify.add_argument("--grid-size", type=int, default=16, help="Cells per direction of the verification grid")
    resume = sub.add_parser("resume", parents=[common], help="Resume a path from a checkpoint")
    resume.add_argument("--checkpoint", type=str, required=True, help="Checkpoint file written by 'run'")
    return parser


def _load(args: argparse.Namespace) -> models.RunConfig:
    config = config_io.load_config(args.config) if args.config else models.RunConfig()
    return config_io.apply_overrides(config, seed=args.seed, out=args.out, steps=args.steps)


def dispatch(args: argparse.Namespace, config: models.RunConfig) -> Dict[str, Any]:
    if args.command == "run":
        return commands.handle_run(models.CommandArgs(config=config))
    if args.command == "ensemble":
        return commands.handle_ensemble(models.CommandArgs(config=config))
    if args.command == "verify":
        suites = tuple(args.suites) if args.suites else None
        return commands.handle_verify(models.VerifyArgs(config=config, suites=suites, grid_size=args.grid_size))
    if args.command == "resume":
        return commands.handle_resume(models.ResumeArgs(config=config, checkpoint=args.checkpoint))
    raise SimulationError(f"unknown command '{args.command}'")


def main_logic(sys_args=None) -> int:
    """
    Parses the command line, runs one command and returns the process exit status.
    Failures print a single `error: <ErrorClass>: <message>` line to stderr.
    """
    parser = build_parser()
    args = parser.parse_args(args=sys_args)
    setup_logging(args)
    try:
        config = _load(args)
        if args.log_file and not Path(args.log_file).is_absolute():
            setup_logging(args, config.output.directory)
        result = dispatch(args, config)
    except SimulationError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        log.exception(f"Unexpected error in '{args.command}'")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    if not args.quiet:
        print(json.dumps(result, indent=2, default=str))
    return 0


def cli_entry_point():
    """Entry point for the 'schns' command-line script."""
    sys.exit(main_logic())


if __name__ == "__main__":
    cli_entry_point()
