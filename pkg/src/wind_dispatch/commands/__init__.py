"""Subcommand registry for the wind-dispatch CLI."""

import argparse
from collections.abc import Callable
from dataclasses import dataclass


@dataclass
class CommandModule:
    """One CLI subcommand: how to declare its arguments and how to run it."""

    name: str
    help: str
    configure: Callable[[argparse.ArgumentParser], None]
    handler: Callable[[argparse.Namespace], int]
