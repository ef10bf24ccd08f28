"""
Shared fixtures for the wind-dispatch tests
"""

import sys
from pathlib import Path

import pytest

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from wind_dispatch.config import load_scenario
from wind_dispatch.engine import run_scenario
from wind_dispatch.turbine import GridBoundary, WgParams

SCENARIO_DIR = Path(__file__).parent.parent / "data" / "scenarios"


@pytest.fixture
def params() -> WgParams:
    return WgParams()


@pytest.fixture
def grid() -> GridBoundary:
    return GridBoundary()


@pytest.fixture
def scenario_path():
    """Path of a bundled scenario file by name."""

    def _path(name: str) -> Path:
        return SCENARIO_DIR / f"{name}.json"

    return _path


@pytest.fixture(scope="session")
def scenario1():
    return load_scenario(SCENARIO_DIR / "scenario1.json")


@pytest.fixture(scope="session")
def scenario1_run(scenario1):
    """The 10 s step-response run, shared across test modules."""
    return run_scenario(scenario1)


@pytest.fixture(scope="session")
def consensus_scenario():
    return load_scenario(SCENARIO_DIR / "constant-wind-consensus.json")


@pytest.fixture(scope="session")
def consensus_run(consensus_scenario):
    """Heterogeneous start under constant wind, recorded at every step."""
    return run_scenario(consensus_scenario)


@pytest.fixture
def write_config(tmp_path):
    """Write a scenario JSON body into tmp_path and return its path."""

    def _write(body: str, name: str = "scenario.json") -> Path:
        path = tmp_path / name
        path.write_text(body, encoding="utf-8")
        return path

    return _write
