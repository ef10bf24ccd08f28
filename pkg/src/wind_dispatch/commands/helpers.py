"""Shared utilities for the subcommands.

Error Handling:
- Nothing here catches exceptions; ConfigError and IntegrationAbort reach
  cli.main, which owns the exit-code mapping
"""

import argparse
import logging
import sys
from pathlib import Path

from ..config import Scenario, load_scenario
from ..storage import LocalArtifactStore, render_key_values

logger = logging.getLogger("wind-dispatch")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def add_config_argument(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument(
        "--config",
        required=required,
        help="Scenario JSON file, or the name of a bundled scenario (e.g. scenario1)",
    )


def add_out_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", required=True, type=Path, help="Output directory (created if missing)")


def load(args: argparse.Namespace) -> Scenario:
    return load_scenario(args.config)


def open_store(args: argparse.Namespace) -> LocalArtifactStore:
    return LocalArtifactStore(args.out)


def print_key_values(values: dict) -> None:
    """key=value lines on stdout, formatted like the summary files."""
    sys.stdout.write(render_key_values(values))
    sys.stdout.flush()


def report_failure(message: str) -> None:
    """One-line diagnostic on stderr."""
    print(f"wind-dispatch: {message}", file=sys.stderr)
