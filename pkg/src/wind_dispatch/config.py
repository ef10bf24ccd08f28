"""Scenario configuration: JSON files validated by pydantic, resolved into a Scenario.

A scenario file has the sections farm, turbine, grid, wind, protocol,
controller, schedule, integrator, initial, calibration and sweep; every
section and field is optional except schedule. See docs/CONFIG-SCHEMA.md.

Environment (a .env file in the working directory is loaded first; variables
already set win):
- WIND_DISPATCH_SCENARIO_DIR: where bare scenario names are looked up
  (default: data/scenarios in the repository)
- WIND_DISPATCH_LOG_LEVEL: CLI logging level (default WARNING)

Error Handling:
- Every failure while reading or resolving a scenario raises ConfigError
- JSON syntax errors name the file, line and column
- Schema violations name the dotted key of each offending field
- Physical infeasibility (demand above available power, dt too coarse for
  k_β, unstable averaging step) is rejected here, before any integration
"""

import json
import logging
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Literal

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .controller import ControllerSettings
from .errors import ConfigError, DomainError
from .protocol import Gains, check_average_step
from .turbine import GridBoundary, WgParams, max_mechanical_power

logger = logging.getLogger("wind-dispatch")

DEFAULT_SCENARIO_DIR = Path(__file__).parent.parent.parent / "data" / "scenarios"
# integration step must resolve the torque loop: dt < DT_HEURISTIC / max(k_β)
DT_HEURISTIC = 0.1
FEASIBILITY_TOL = 1e-12


def load_environment() -> None:
    """Load ./.env into the process environment without overriding existing variables."""
    env_file = Path.cwd() / ".env"
    if env_file.exists():
        load_dotenv(env_file, override=False)
        logger.debug(f"Loaded environment from {env_file}")


def scenario_dir() -> Path:
    return Path(os.environ.get("WIND_DISPATCH_SCENARIO_DIR", str(DEFAULT_SCENARIO_DIR)))


def log_level() -> str:
    return os.environ.get("WIND_DISPATCH_LOG_LEVEL", "WARNING").upper()


# --- schema ---------------------------------------------------------------


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FarmConfig(_Section):
    n: int = Field(10, ge=2)
    base_power: float | None = Field(None, gt=0, description="Farm base S_farm in VA; default n·S_b")


class TurbineConfig(_Section):
    rotor_radius: float = Field(45.0, gt=0)
    base_power: float = Field(2.0e6, gt=0)
    inertia: float = Field(3.0, gt=0)
    stator_reactance: float = Field(3.6, gt=0)
    stator_transient_reactance: float = Field(0.178, gt=0)
    rotor_reactance: float = Field(3.58, gt=0)
    mutual_reactance: float = Field(3.5, gt=0)
    open_circuit_time_const: float = Field(0.95, gt=0)
    gearbox_ratio: float = Field(5.0, gt=0)
    poles: int = Field(4, ge=2)


class GridConfig(_Section):
    v_s: float = Field(1.0, gt=0)
    omega_s: float = Field(2.0 * math.pi * 60.0, gt=0)
    rho: float = Field(1.225, gt=0)


class WindConfig(_Section):
    mean: float = Field(8.0, gt=0)
    means: list[float] | None = None
    turbulence_enabled: bool = False
    seed: int = Field(0, ge=0, lt=2**64)
    length_scale: float = Field(200.0, gt=0)
    turbulence_intensity: float = Field(0.1, ge=0)
    p1: float | None = Field(None, gt=0)
    p2: float | None = Field(None, gt=0)
    k: float | None = Field(None, ge=0)


class ProtocolConfig(_Section):
    k_alpha: float | list[float] = 10.0
    aggregation: Literal["relay", "average"] = "relay"
    average_rounds: int = Field(400, ge=1)
    average_step: float = Field(0.5, gt=0)
    hop_delay_steps: int = Field(0, ge=0)


class ControllerConfig(_Section):
    k_beta: float | list[float] = 20.0
    eps_sing: float = Field(1e-8, gt=0)
    vdr_limit: float = Field(1.0, gt=0)
    vqr_policy: Literal["hold", "zero"] = "hold"
    rate_form: Literal["derived", "appendix"] = "derived"
    tm_rate: Literal["analytic", "finite_difference"] = "analytic"


class IntegratorConfig(_Section):
    dt: float = Field(1e-4, gt=0)
    t_end: float = Field(1.0, gt=0)
    decimate: int = Field(10, ge=1)


class InitialConfig(_Section):
    utilization: float | list[float] | None = None
    xi_h: float | None = None
    torque_offset: float = 0.0


class CalibrationConfig(_Section):
    initial_utilization: float | None = Field(None, gt=0, lt=1)


class SweepConfig(_Section):
    k_alpha_min: float = Field(0.05, gt=0)
    k_alpha_max: float = Field(50.0, gt=0)
    t_end: float = Field(300.0, gt=0)
    dt: float = Field(0.02, gt=0)
    rel_width: float = Field(0.05, gt=0, lt=1)
    max_iterations: int = Field(40, ge=1)
    initial_xi: float = 0.0
    initial_z: float = 0.0

    @model_validator(mode="after")
    def _ordered(self):
        if self.k_alpha_min >= self.k_alpha_max:
            raise ValueError("k_alpha_min must be below k_alpha_max")
        return self


class ScenarioConfig(_Section):
    name: str = "scenario"
    farm: FarmConfig = Field(default_factory=FarmConfig)
    turbine: TurbineConfig = Field(default_factory=TurbineConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    wind: WindConfig = Field(default_factory=WindConfig)
    protocol: ProtocolConfig = Field(default_factory=ProtocolConfig)
    controller: ControllerConfig = Field(default_factory=ControllerConfig)
    schedule: list[tuple[float, float]] = Field(min_length=1)
    integrator: IntegratorConfig = Field(default_factory=IntegratorConfig)
    initial: InitialConfig = Field(default_factory=InitialConfig)
    calibration: CalibrationConfig = Field(default_factory=CalibrationConfig)
    sweep: SweepConfig | None = None


# --- resolved scenario -------------------------------------------------------


@dataclass(frozen=True)
class ReferenceSchedule:
    """Piecewise-constant demand P_d in farm p.u.; entries are (t_start, P_d)."""

    entries: tuple[tuple[float, float], ...]

    def __post_init__(self):
        times = [t for t, _ in self.entries]
        if not self.entries or times[0] != 0.0:
            raise ConfigError("schedule must start at t=0")
        if any(b <= a for a, b in zip(times, times[1:], strict=False)):
            raise ConfigError("schedule times must be strictly increasing")

    def value_at(self, t: float) -> float:
        value = self.entries[0][1]
        for t_start, p_d in self.entries:
            if t >= t_start:
                value = p_d
        return value

    def start_step(self, t_start: float, dt: float) -> int:
        """First grid index k with k·dt ≥ t_start."""
        return math.ceil(t_start / dt - 1e-9)

    def value_at_step(self, k: int, dt: float) -> float:
        value = self.entries[0][1]
        for t_start, p_d in self.entries:
            if k >= self.start_step(t_start, dt):
                value = p_d
        return value

    @property
    def values(self) -> list[float]:
        return [p_d for _, p_d in self.entries]


@dataclass(frozen=True)
class WindSettings:
    means: np.ndarray
    turbulence_enabled: bool
    seed: int
    length_scale: float
    turbulence_intensity: float
    p1: float | None
    p2: float | None
    k_gain: float | None


@dataclass(frozen=True)
class InitialConditions:
    """utilization None means the equilibrium of the first demand value."""

    utilization: np.ndarray | None
    xi_h: float | None
    torque_offset: float


@dataclass(frozen=True)
class SweepTemplate:
    """Protocol-only linear model the ε* sweep runs on."""

    alpha: np.ndarray
    schedule: ReferenceSchedule
    k_alpha_min: float
    k_alpha_max: float
    t_end: float
    dt: float
    rel_width: float
    max_iterations: int
    initial_xi: float
    initial_z: float


@dataclass(frozen=True)
class Scenario:
    name: str
    n: int
    params: WgParams
    grid: GridBoundary
    gains: Gains
    wind: WindSettings
    schedule: ReferenceSchedule
    dt: float
    t_end: float
    decimate: int
    base_power: float
    initial: InitialConditions
    aggregation: str
    average_rounds: int
    average_step: float
    hop_delay_steps: int
    controller: ControllerSettings
    sweep: SweepTemplate | None = None

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def alpha(self) -> np.ndarray:
        """α_i = P̄_m(v_m,i) in farm p.u."""
        return max_mechanical_power(self.wind.means, self.params, self.grid) / self.base_power

    def with_overrides(self, seed: int | None = None, decimate: int | None = None) -> "Scenario":
        scenario = self
        if seed is not None:
            if not 0 <= seed < 2**64:
                raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
            scenario = replace(scenario, wind=replace(scenario.wind, seed=seed))
        if decimate is not None:
            if decimate < 1:
                raise ConfigError(f"decimate must be at least 1, got {decimate}")
            scenario = replace(scenario, decimate=decimate)
        return scenario


def _per_generator(value, n: int, key: str) -> np.ndarray:
    array = np.atleast_1d(np.asarray(value, dtype=float))
    if array.size == 1:
        return np.full(n, float(array[0]))
    if array.size != n:
        raise ConfigError(f"{key}: expected 1 or {n} values, got {array.size}")
    return array


def _format_location(loc: tuple) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def resolve_config_path(path_or_name: str | Path) -> Path:
    """A path that exists, or a bundled scenario name such as 'scenario1'."""
    candidate = Path(path_or_name)
    if candidate.exists():
        return candidate
    bundled = scenario_dir() / f"{path_or_name}.json"
    if bundled.exists():
        return bundled
    raise ConfigError(f"{path_or_name}: no such file or bundled scenario (looked in {scenario_dir()})")


def read_config(path: Path) -> ScenarioConfig:
    """Parse and validate one scenario file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"{path}: cannot read: {e}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}") from e
    try:
        return ScenarioConfig.model_validate(raw)
    except ValidationError as e:
        problems = "; ".join(f"{_format_location(err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"{path}: {problems}") from e


def build_scenario(config: ScenarioConfig) -> Scenario:
    """Resolve defaults, calibration and feasibility into an immutable Scenario."""
    n = config.farm.n
    try:
        params = WgParams(**config.turbine.model_dump())
        grid = GridBoundary(**config.grid.model_dump())
        gains = Gains(
            _per_generator(config.protocol.k_alpha, n, "protocol.k_alpha"),
            _per_generator(config.controller.k_beta, n, "controller.k_beta"),
        )
        controller = ControllerSettings(
            eps_sing=config.controller.eps_sing,
            vdr_limit=config.controller.vdr_limit,
            vqr_policy=config.controller.vqr_policy,
            rate_form=config.controller.rate_form,
            tm_rate=config.controller.tm_rate,
        )
    except DomainError as e:
        raise ConfigError(str(e)) from e

    schedule = ReferenceSchedule(tuple((float(t), float(p)) for t, p in config.schedule))
    if any(p < 0 for p in schedule.values):
        raise ConfigError("schedule: demand must be non-negative")
    base_power = config.farm.base_power or n * params.base_power

    wind_cfg = config.wind
    if config.calibration.initial_utilization is not None:
        if wind_cfg.means is not None:
            raise ConfigError("calibration.initial_utilization cannot be combined with wind.means")
        p_d0 = schedule.entries[0][1]
        if p_d0 <= 0:
            raise ConfigError("calibration.initial_utilization needs a positive initial demand")
        z = config.calibration.initial_utilization
        per_unit_cube = 0.5 * grid.rho * params.cp_max * params.swept_area / base_power
        means = np.full(n, (p_d0 / (z * n * per_unit_cube)) ** (1.0 / 3.0))
        logger.info(f"Calibrated mean wind to {means[0]:.6f} m/s for initial utilization {z}")
    elif wind_cfg.means is not None:
        means = _per_generator(wind_cfg.means, n, "wind.means")
        if np.any(means <= 0):
            raise ConfigError("wind.means: wind speeds must be positive")
    else:
        means = np.full(n, wind_cfg.mean)
    wind = WindSettings(
        means=means,
        turbulence_enabled=wind_cfg.turbulence_enabled,
        seed=wind_cfg.seed,
        length_scale=wind_cfg.length_scale,
        turbulence_intensity=wind_cfg.turbulence_intensity,
        p1=wind_cfg.p1,
        p2=wind_cfg.p2,
        k_gain=wind_cfg.k,
    )

    utilization = None
    if config.initial.utilization is not None:
        utilization = _per_generator(config.initial.utilization, n, "initial.utilization")
        if np.any(utilization <= 0) or np.any(utilization >= 1):
            raise ConfigError("initial.utilization: values must lie in (0, 1)")
    initial = InitialConditions(utilization, config.initial.xi_h, config.initial.torque_offset)

    dt = config.integrator.dt
    if dt >= DT_HEURISTIC / float(np.max(gains.k_beta)):
        raise ConfigError(
            f"integrator.dt={dt} too coarse for controller.k_beta={np.max(gains.k_beta)}: need dt < {DT_HEURISTIC}/k_beta"
        )
    if config.integrator.t_end < dt:
        raise ConfigError("integrator.t_end must be at least one step")
    if config.protocol.aggregation == "average":
        check_average_step(n, config.protocol.average_step)

    scenario = Scenario(
        name=config.name,
        n=n,
        params=params,
        grid=grid,
        gains=gains,
        wind=wind,
        schedule=schedule,
        dt=dt,
        t_end=config.integrator.t_end,
        decimate=config.integrator.decimate,
        base_power=base_power,
        initial=initial,
        aggregation=config.protocol.aggregation,
        average_rounds=config.protocol.average_rounds,
        average_step=config.protocol.average_step,
        hop_delay_steps=config.protocol.hop_delay_steps,
        controller=controller,
    )

    available = float(np.sum(scenario.alpha()))
    if not wind.turbulence_enabled and max(schedule.values) > available * (1.0 + FEASIBILITY_TOL):
        raise ConfigError(
            f"schedule: demand {max(schedule.values)} p.u. exceeds available power {available:.6g} p.u. at mean wind"
        )

    if config.sweep is not None:
        scenario = replace(scenario, sweep=build_sweep_template(scenario, config.sweep))
    return scenario


def build_sweep_template(scenario: Scenario, s: SweepConfig | None = None) -> SweepTemplate:
    """Protocol-only sweep settings for a scenario; defaults when s is None."""
    s = s or SweepConfig()
    return SweepTemplate(
        alpha=scenario.alpha(),
        schedule=scenario.schedule,
        k_alpha_min=s.k_alpha_min,
        k_alpha_max=s.k_alpha_max,
        t_end=s.t_end,
        dt=s.dt,
        rel_width=s.rel_width,
        max_iterations=s.max_iterations,
        initial_xi=s.initial_xi,
        initial_z=s.initial_z,
    )


def load_scenario(path_or_name: str | Path) -> Scenario:
    """Read, validate and resolve a scenario file or bundled scenario name."""
    path = resolve_config_path(path_or_name)
    scenario = build_scenario(read_config(path))
    logger.info(f"Loaded scenario '{scenario.name}' from {path} (n={scenario.n}, dt={scenario.dt}, t_end={scenario.t_end})")
    return scenario
