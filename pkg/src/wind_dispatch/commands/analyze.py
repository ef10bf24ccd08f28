"""`analyze`: recompute summary metrics from a recorded trace.csv."""

import argparse
from pathlib import Path

from ..analysis import build_stability_report, trace_metrics
from ..errors import ConfigError
from ..storage import read_trace
from . import CommandModule
from .helpers import EXIT_OK, add_config_argument, add_out_argument, load, open_store


def register() -> CommandModule:
    def configure(parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--trace", required=True, type=Path, help="trace.csv written by `run`")
        add_out_argument(parser)
        add_config_argument(parser, required=False)

    def handler(args: argparse.Namespace) -> int:
        trace = read_trace(args.trace)
        if len(trace) == 0:
            raise ConfigError(f"{args.trace}: trace has no samples")
        store = open_store(args)
        store.write_key_values("summary.txt", trace_metrics(trace).to_key_values())
        if args.config is not None:
            store.write_key_values("report.txt", build_stability_report(load(args)).to_key_values())
        return EXIT_OK

    return CommandModule(
        name="analyze",
        help="Summarize an existing trace; with --config also write the stability report",
        configure=configure,
        handler=handler,
    )
