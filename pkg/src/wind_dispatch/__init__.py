"""
wind-dispatch

Simulates a deloaded DFIG wind farm whose generators share a dispatch
command by leader-follower consensus on their utilization levels.
"""

__version__ = "0.1.0"

from .config import Scenario, load_scenario
from .engine import FarmSimulator, RunResult, run_scenario

__all__ = ["FarmSimulator", "RunResult", "Scenario", "load_scenario", "run_scenario", "__version__"]
