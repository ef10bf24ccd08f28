"""
wind-dispatch command line

Subcommands:
    run                 simulate a scenario, write trace.csv and summary.txt
    sweep-epsilon       bracket the stability threshold ε*
    analyze             summarize an existing trace.csv
    print-equilibrium   print the consensus equilibrium as key=value lines

Error Handling Strategy:
- Logging goes to stderr so stdout stays machine-readable
- ConfigError exits 1, IntegrationAbort and anything unexpected exit 2
- Every failure prints one diagnostic line on stderr; unexpected failures
  also log the traceback
"""

import argparse
import logging
import sys
import traceback

from . import __version__
from .commands import CommandModule, analyze, equilibrium, run, sweep
from .commands.helpers import EXIT_CONFIG, EXIT_RUNTIME, report_failure
from .config import load_environment, log_level
from .errors import ConfigError, IntegrationAbort

logger = logging.getLogger("wind-dispatch")


def configure_logging() -> None:
    level = log_level()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(
        level=level,
        format="%(asctime)s [%(name)s] %(levelname)s: %(message)s",
        stream=sys.stderr,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wind-dispatch",
        description="Deloaded wind-farm dispatch by leader-follower consensus",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    modules: list[CommandModule] = [run.register(), sweep.register(), analyze.register(), equilibrium.register()]
    for module in modules:
        sub = subparsers.add_parser(module.name, help=module.help, description=module.help)
        module.configure(sub)
        sub.set_defaults(handler=module.handler)
    return parser


def main(argv: list[str] | None = None) -> int:
    """Entry point for the wind-dispatch command. Returns the exit code."""
    load_environment()
    configure_logging()
    args = build_parser().parse_args(argv)
    logger.debug(f"Command: {args.command}")

    try:
        return args.handler(args)
    except ConfigError as e:
        report_failure(f"config error: {e}")
        return EXIT_CONFIG
    except IntegrationAbort as e:
        report_failure(f"integration aborted: {e}")
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        report_failure("interrupted")
        return EXIT_RUNTIME
    except Exception as e:
        logger.error(f"{args.command} failed: {e}")
        logger.error(f"Traceback:\n{traceback.format_exc()}")
        report_failure(f"{type(e).__name__}: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
