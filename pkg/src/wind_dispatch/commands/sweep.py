"""`sweep-epsilon`: estimate ε* on the protocol-only linear model.

Writes report.txt (stability report with the ε* bracket) and sweep.csv (one
row per simulated k_α, sorted by ε). Scenarios without a sweep section use
the default sweep settings.
"""

import argparse

from ..analysis import build_stability_report, epsilon_star_sweep
from ..config import build_sweep_template
from . import CommandModule
from .helpers import EXIT_OK, add_config_argument, add_out_argument, load, open_store

SWEEP_COLUMNS = ["k_alpha", "epsilon", "verdict", "final_spread", "final_tracking_error"]


def register() -> CommandModule:
    def configure(parser: argparse.ArgumentParser) -> None:
        add_config_argument(parser)
        add_out_argument(parser)

    def handler(args: argparse.Namespace) -> int:
        scenario = load(args)
        store = open_store(args)
        result = epsilon_star_sweep(scenario.sweep or build_sweep_template(scenario))
        report = build_stability_report(scenario, result)
        rows = [
            (p.k_alpha, p.epsilon, p.verdict.value, p.final_spread, p.final_tracking_error)
            for p in sorted(result.points, key=lambda p: p.epsilon)
        ]
        store.write_csv("sweep.csv", SWEEP_COLUMNS, rows)
        store.write_key_values("report.txt", report.to_key_values())
        return EXIT_OK

    return CommandModule(
        name="sweep-epsilon",
        help="Bracket the stability threshold ε* by bisection over k_alpha",
        configure=configure,
        handler=handler,
    )
