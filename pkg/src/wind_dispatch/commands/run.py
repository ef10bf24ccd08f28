"""`run`: simulate one scenario and write trace.csv and summary.txt.

Error Handling:
- An integration abort still writes the partial trace and a summary with
  aborted=true before returning EXIT_RUNTIME
"""

import argparse
import logging

from ..engine import run_scenario
from . import CommandModule
from .helpers import EXIT_OK, EXIT_RUNTIME, add_config_argument, add_out_argument, load, open_store, report_failure

logger = logging.getLogger("wind-dispatch")


def register() -> CommandModule:
    def configure(parser: argparse.ArgumentParser) -> None:
        add_config_argument(parser)
        add_out_argument(parser)
        parser.add_argument("--seed", type=int, default=None, help="Override wind.seed (unsigned 64-bit)")
        parser.add_argument("--decimate", type=int, default=None, help="Record every k-th step")

    def handler(args: argparse.Namespace) -> int:
        scenario = load(args).with_overrides(seed=args.seed, decimate=args.decimate)
        store = open_store(args)
        result = run_scenario(scenario)
        store.write_trace(result.trace)
        store.write_key_values("summary.txt", result.summary())
        if result.aborted:
            report_failure(f"integration aborted: {result.abort_reason}")
            return EXIT_RUNTIME
        logger.info(f"Run complete: {result.steps} steps in {result.wall_time:.2f}s, artifacts in {store.out_dir}")
        return EXIT_OK

    return CommandModule(
        name="run",
        help="Simulate a scenario and write trace.csv and summary.txt",
        configure=configure,
        handler=handler,
    )
