"""`print-equilibrium`: the consensus equilibrium of a scenario as key=value lines."""

import argparse

from ..analysis import AlphaVector, epsilon, equilibrium, scope_label
from . import CommandModule
from .helpers import EXIT_OK, add_config_argument, load, print_key_values


def equilibrium_values(scenario) -> dict:
    alpha = AlphaVector(scenario.alpha())
    p_d_initial = scenario.schedule.entries[0][1]
    p_d = scenario.schedule.entries[-1][1]
    xi_h0, z0 = equilibrium(p_d, alpha)
    xi_h0_initial, _ = equilibrium(p_d_initial, alpha)

    values = {"p_d": p_d, "xi_h0": xi_h0}
    values.update({f"z0_{i}": float(z) for i, z in enumerate(z0, start=1)})
    values.update({f"alpha_{i}": float(a) for i, a in enumerate(alpha.values, start=1)})
    values["alpha_sum"] = alpha.total
    values["epsilon"] = epsilon(alpha, scenario.gains)
    values["p_d_initial"] = p_d_initial
    values["xi_h0_initial"] = xi_h0_initial
    values["stability_scope"] = scope_label(scenario.gains.homogeneous)
    return values


def register() -> CommandModule:
    def configure(parser: argparse.ArgumentParser) -> None:
        add_config_argument(parser)

    def handler(args: argparse.Namespace) -> int:
        print_key_values(equilibrium_values(load(args)))
        return EXIT_OK

    return CommandModule(
        name="print-equilibrium",
        help="Print ξ_h0, z_0, α and ε for a scenario's final demand",
        configure=configure,
        handler=handler,
    )
